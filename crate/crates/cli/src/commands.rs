//! Subcommand implementations. Each returns the process exit code.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bmlab_core::chaos::{contraction_norm_sq, exact_total_variance, exact_variance, fourth_moment_gap, Normalization};
use bmlab_core::hermite::{HermiteExpansion, Observable};
use bmlab_core::sampler::{gradient_field, write_raw, GffSampler, StationarySampler};
use bmlab_core::stats::{
    covariance_verdict, gff_odd_power_verdict, ks_normal_test, run_replicas, tightness_survey, variance_verdict,
    FieldObservable, FieldSource, GffConfig, ReplicaConfig, Rule, StatKey, StatKind, Verdict,
};
use serde_json::json;

use crate::config::{ExperimentConfig, Purpose, Resolved};
use crate::report::{plot_csv, statistics_csv, write_file, Report};
use crate::{exit, Cli, CliError, Command};

/// Chaos-variance checks against the exact finite-N formula use this many standard errors.
const EXACT_SE: f64 = 4.0;
const KS_LEVEL: f64 = 0.01;
/// Floor of the fourth-moment tolerance; the jackknife error applies above it.
const FOURTH_MOMENT_TOL: f64 = 0.1;
const DEFAULT_OUT: &str = "bm-lab-out";

pub fn run(cli: Cli) -> Result<i32, CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        // fails only when a pool already exists, as in repeated in-process calls
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Expand { spec, variance, q_max } => cmd_expand(spec, *variance, *q_max),
        Command::Plotdata { run_dir } => {
            let dir = run_dir.clone().or_else(|| cli.out.clone()).unwrap_or_else(|| PathBuf::from("."));
            cmd_plotdata(&dir)?;
            Ok(exit::OK)
        }
        cmd => {
            let mut config = load_config(&cli)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let out = cli
                .out
                .clone()
                .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let report = execute(cmd, &config, &out)?;
            report.write(&out)?;
            for v in &report.verdicts {
                println!("{} {}: observed {} predicted {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.observed, v.predicted);
            }
            println!("report: {}", out.join("report.json").display());
            Ok(if report.all_pass() { exit::OK } else { exit::STATISTICAL })
        }
    }
}

/// Run a config-driven subcommand; writes the CSV outputs, not `report.json`.
pub fn execute(cmd: &Command, config: &ExperimentConfig, out: &Path) -> Result<Report, CliError> {
    match cmd {
        Command::Clt => cmd_clt(config, out),
        Command::Contraction => cmd_contraction(config, out),
        Command::Gff => cmd_gff(config, out),
        Command::Tightness => cmd_tightness(config),
        Command::SampleDump => cmd_sample_dump(config, out),
        Command::Expand { .. } | Command::Plotdata { .. } => {
            Err(CliError::Validation("expand and plotdata take no config".into()))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Validation("this command needs --config PATH".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    ExperimentConfig::from_json(&text)
}

fn config_json(config: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

/// Parse `x^p`, `poly:a0,a1,..` or `hermite:h0,c1,c2,..`.
pub fn parse_observable(spec: &str) -> Result<Observable, CliError> {
    let bad = |why: &str| CliError::Validation(format!("observable '{spec}': {why}"));
    let numbers = |list: &str| -> Result<Vec<f64>, CliError> {
        list.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad("expected comma-separated numbers"))).collect()
    };
    let s = spec.trim();
    if let Some(p) = s.strip_prefix("x^") {
        let p = p.parse::<u32>().map_err(|_| bad("power must be a non-negative integer"))?;
        return Ok(Observable::Power { p });
    }
    if s == "x" {
        return Ok(Observable::Power { p: 1 });
    }
    if let Some(list) = s.strip_prefix("poly:") {
        return Ok(Observable::Polynomial { coeffs: numbers(list)? });
    }
    if let Some(list) = s.strip_prefix("hermite:") {
        let v = numbers(list)?;
        let coeffs = v[1..].iter().enumerate().map(|(i, &c)| (i as u32 + 1, c)).collect();
        return Ok(Observable::Hermite { h0: v[0], coeffs });
    }
    Err(bad("use x^p, poly:a0,a1,.. or hermite:h0,c1,.."))
}

pub fn format_expansion(e: &HermiteExpansion) -> String {
    let mut s = format!("variance_base = {}\nh0 = {}\n", e.variance_base, e.h0);
    match e.hermite_rank() {
        Ok(m) => s.push_str(&format!("m = {m}\n")),
        Err(_) => s.push_str("m = none (constant)\n"),
    }
    for &(q, c) in &e.coeffs {
        if c != 0.0 {
            s.push_str(&format!("c{q} = {c}\n"));
        }
    }
    if e.tail_variance > 0.0 {
        s.push_str(&format!("tail_variance = {}\n", e.tail_variance));
    }
    s
}

fn cmd_expand(spec: &str, variance: f64, q_max: u32) -> Result<i32, CliError> {
    let obs = parse_observable(spec)?;
    let e = obs.expand(variance, q_max.max(obs.degree()))?;
    print!("{}", format_expansion(&e));
    println!("{}", serde_json::to_string(&e).expect("expansion serializes"));
    Ok(exit::OK)
}

fn field_observable(obs: &Observable, r: &Resolved) -> Result<FieldObservable, CliError> {
    let expansion = obs.expand(r.variance_base, r.config.q_max)?;
    let eval = obs.evaluator(r.variance_base)?;
    Ok(FieldObservable { expansion, eval: Arc::from(eval) })
}

fn cmd_clt(config: &ExperimentConfig, out: &Path) -> Result<Report, CliError> {
    let r = config.resolve(Purpose::Clt)?;
    let obs = r.config.observable.clone();
    clt_pipeline(&r, &obs, "clt", out)
}

/// Variance checks at every N, normality and fourth-moment checks at the largest N, and
/// the covariance matrix of the CLT-scaled functionals against `<f_i, f_j>`.
fn clt_pipeline(r: &Resolved, obs: &Observable, command: &str, out: &Path) -> Result<Report, CliError> {
    let cfg = &r.config;
    let observable = field_observable(obs, r)?;
    let e = observable.expansion.clone();
    let limit = e.limit_constant(&r.model, cfg.lq_radius)?;
    let c_m = limit.signed;
    if !(c_m > 0.0) {
        return Err(CliError::Validation(format!("limit constant C_m = {c_m} is not positive; the CLT scaling is undefined")));
    }
    let nf = cfg.test_functions.len();
    let mut stats = Vec::new();
    for f in 0..nf {
        stats.push(StatKind::Functional { f, normalization: Normalization::CltScaled });
        for &q in &cfg.components {
            stats.push(StatKind::Component { f, q });
        }
    }
    let run = run_replicas(&ReplicaConfig {
        source: r.source.clone(),
        gradient_axis: cfg.gradient_axis,
        observable,
        test_functions: cfg.test_functions.clone(),
        n_list: cfg.n_list.clone(),
        stats,
        replicas: cfg.replicas,
        seed: cfg.seed,
        c_m: Some(c_m),
    })?;
    if cfg.write_statistics {
        write_file(&out.join("statistics.csv"), &statistics_csv(&run.rows()))?;
    }

    let mut report = Report::new(command, config_json(cfg), cfg.seed);
    let labels: Vec<String> = cfg.test_functions.iter().map(|f| f.label()).collect();
    let n_max = cfg.max_n();
    for &n in &cfg.n_list {
        let mut scaled_cols = Vec::new();
        for (fi, f) in cfg.test_functions.iter().enumerate() {
            let key = StatKey { n, kind: StatKind::Functional { f: fi, normalization: Normalization::CltScaled } };
            let col = run.column(run.find(&key).expect("requested statistic"));
            let predicted = exact_total_variance(&e, &r.model, f, n) / c_m;
            let v = variance_verdict(format!("variance[N={n},f={}]", labels[fi]), &col, predicted, EXACT_SE);
            report.plot(n, &labels[fi], "variance", v.observed);
            report.plot(n, &labels[fi], "variance_predicted", predicted);
            report.verdicts.push(v);
            if col.len() >= 100 {
                let sd = predicted.sqrt();
                let z: Vec<f64> = col.iter().map(|x| x / sd).collect();
                let fm = fourth_moment_gap(&z)?;
                report.plot(n, &labels[fi], "fourth_moment_gap", fm.gap);
                if n == n_max {
                    let ks = ks_normal_test(&z)?;
                    report.plot(n, &labels[fi], "ks_p_value", ks.p_value);
                    report.verdicts.push(Verdict::new(
                        format!("ks[N={n},f={}]", labels[fi]),
                        ks.p_value,
                        KS_LEVEL,
                        Rule::Above { min: KS_LEVEL },
                    ));
                    report.verdicts.push(Verdict::new(
                        format!("fourth_moment[N={n},f={}]", labels[fi]),
                        fm.m4,
                        3.0,
                        Rule::Absolute { tol: FOURTH_MOMENT_TOL.max(4.0 * fm.se) },
                    ));
                }
            }
            for &q in &cfg.components {
                let key = StatKey { n, kind: StatKind::Component { f: fi, q } };
                let col = run.column(run.find(&key).expect("requested statistic"));
                let predicted = exact_variance(q, e.coeff(q), &r.model, f, n);
                let v = variance_verdict(format!("component_variance[N={n},f={},q={q}]", labels[fi]), &col, predicted, EXACT_SE);
                report.plot(n, &labels[fi], &format!("component_variance_q{q}"), v.observed);
                report.verdicts.push(v);
            }
            scaled_cols.push(col);
        }
        if n == n_max && nf >= 2 && cfg.replicas >= 3 {
            let samples: Vec<Vec<f64>> = (0..cfg.replicas as usize).map(|i| scaled_cols.iter().map(|c| c[i]).collect()).collect();
            let predicted: Vec<Vec<f64>> = cfg
                .test_functions
                .iter()
                .map(|a| cfg.test_functions.iter().map(|b| a.l2_inner(b, cfg.dimension)).collect())
                .collect();
            let cv = covariance_verdict(&samples, &predicted, cfg.se_multiplier, &labels)?;
            report.verdicts.extend(cv.into_iter().map(|mut v| {
                v.name = format!("{}[N={n}]", v.name);
                v
            }));
        }
    }
    report.details = json!({
        "model": r.model.id(),
        "lattice_size": r.lattice_size,
        "expansion": e,
        "limit_constant": limit,
    });
    Ok(report)
}

fn cmd_contraction(config: &ExperimentConfig, out: &Path) -> Result<Report, CliError> {
    let r = config.resolve(Purpose::Contraction)?;
    let spec = config.contraction.clone().expect("validated");
    let orders: Vec<u32> = if spec.r.is_empty() { (1..spec.q).collect() } else { spec.r.clone() };
    let f = &config.test_functions[0];
    let mut n_list = config.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let mut report = Report::new("contraction", config_json(config), config.seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["N", "q", "r", "value", "absolute"]).expect("in-memory csv");
    let mut rows = Vec::new();
    for &rr in &orders {
        let mut series = Vec::new();
        for &n in &n_list {
            let signed = contraction_norm_sq(spec.q, rr, spec.c_q, &r.model, f, n, false)?;
            let absolute = contraction_norm_sq(spec.q, rr, spec.c_q, &r.model, f, n, true)?;
            w.write_record([n.to_string(), spec.q.to_string(), rr.to_string(), signed.to_string(), absolute.to_string()])
                .expect("in-memory csv");
            report.plot(n, &f.label(), &format!("contraction_q{}_r{rr}", spec.q), signed);
            report.verdicts.push(Verdict::flag(
                format!("contraction_bound[N={n},q={},r={rr}]", spec.q),
                signed <= absolute * (1.0 + 1e-12),
            ));
            series.push(signed);
            rows.push(json!({"N": n, "q": spec.q, "r": rr, "value": signed, "absolute": absolute}));
        }
        if series.len() >= 2 {
            let decreasing = series.windows(2).all(|p| p[1] < p[0]);
            report.verdicts.push(Verdict::flag(format!("contraction_decreasing[q={},r={rr}]", spec.q), decreasing));
        }
    }
    report.details = json!({"model": r.model.id(), "rows": rows});
    write_file(&out.join("contraction.csv"), &w.into_inner().expect("in-memory csv"))?;
    Ok(report)
}

fn cmd_gff(config: &ExperimentConfig, out: &Path) -> Result<Report, CliError> {
    let r = config.resolve(Purpose::Gff)?;
    let spec = config.gff.clone().expect("validated");
    if spec.power.is_multiple_of(2) {
        return clt_pipeline(&r, &Observable::Power { p: spec.power }, "gff", out);
    }
    let f = config.test_functions[0].clone();
    let g = config.test_functions.get(1).cloned().unwrap_or_else(|| f.clone());
    let gr = gff_odd_power_verdict(&GffConfig {
        d: config.dimension,
        p: (spec.power - 1) / 2,
        m: r.lattice_size,
        n_list: config.n_list.clone(),
        f: f.clone(),
        g: g.clone(),
        replicas: config.replicas,
        seed: config.seed,
        ratio_range: spec.ratio_range,
    })?;
    let mut report = Report::new("gff", config_json(config), config.seed);
    let label = format!("{},{}", f.label(), g.label());
    for row in &gr.rows {
        report.plot(row.n, &label, "covariance", row.observed);
        report.plot(row.n, &label, "covariance_predicted", row.predicted);
        report.plot(row.n, &label, "ratio", row.ratio);
        report.plot(row.n, &label, "remainder_share", row.remainder_share);
    }
    report.verdicts = gr.verdicts.clone();
    report.details = serde_json::to_value(&gr).expect("gff report serializes");
    Ok(report)
}

fn cmd_tightness(config: &ExperimentConfig) -> Result<Report, CliError> {
    let r = config.resolve(Purpose::Tightness)?;
    if config.gradient_axis.is_some() {
        return Err(CliError::Validation("tightness surveys the field itself; drop gradient_axis".into()));
    }
    let spec = config.tightness.clone().expect("validated");
    let alpha = config.alpha.expect("validated");
    let observable = field_observable(&config.observable, &r)?;
    let tr = tightness_survey(
        r.source.clone(),
        observable,
        &config.n_list,
        alpha,
        spec.k_max,
        spec.kernel_grid,
        config.replicas,
        config.seed,
    )?;
    let mut report = Report::new("tightness", config_json(config), config.seed);
    for row in &tr.rows {
        report.plot(row.n, "-", "sobolev_norm", row.mean);
        report.plot(row.n, "-", "sobolev_norm_se", row.se);
    }
    report.verdicts = tr.verdicts.clone();
    report.details = json!({"model": r.model.id(), "survey": tr});
    Ok(report)
}

fn cmd_sample_dump(config: &ExperimentConfig, out: &Path) -> Result<Report, CliError> {
    let r = config.resolve(Purpose::SampleDump)?;
    let mut report = Report::new("sample-dump", config_json(config), config.seed);
    let mut files = Vec::new();
    for &replica in &config.dump_replicas {
        let mut sample = match &r.source {
            FieldSource::Torus { model, m } => StationarySampler::new(model, *m)?.sample(config.seed, replica),
            FieldSource::GffBox { d, m } => GffSampler::new(*d, *m)?.sample(config.seed, replica),
        };
        if let Some(axis) = config.gradient_axis {
            sample = gradient_field(&sample, axis)?;
        }
        let name = format!("sample_{replica}.bin");
        let path = out.join(&name);
        fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
        let file = fs::File::create(&path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
        write_raw(&sample, BufWriter::new(file)).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        files.push(json!({"replica_index": replica, "file": name}));
    }
    report.details = json!({"model": r.model.id(), "lattice_size": r.lattice_size, "files": files});
    Ok(report)
}

/// `plotdata.csv` from the `plot_rows` of `dir/report.json`.
pub fn cmd_plotdata(dir: &Path) -> Result<PathBuf, CliError> {
    let report = Report::read(dir)?;
    let path = dir.join("plotdata.csv");
    write_file(&path, &plot_csv(&report.plot_rows))?;
    println!("{}", path.display());
    Ok(path)
}
