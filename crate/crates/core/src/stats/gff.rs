//! Odd powers of the lattice free field against the discrete Green quadratic form.

use serde::Serialize;

use crate::chaos::{Normalization, TestFunction};
use crate::error::{Error, Result};
use crate::fft::strides;
use crate::green::{discrete_green, DEFAULT_TOL};
use crate::hermite::expand_polynomial;
use crate::lattice;
use crate::sampler::{box_green, GffSampler};
use crate::stats::engine::{run_replicas, FieldObservable, FieldSource, ReplicaConfig, StatKind};
use crate::stats::{Rule, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct GffConfig {
    pub d: usize,
    /// `H(x) = x^{2p+1}`.
    pub p: u32,
    pub m: usize,
    pub n_list: Vec<usize>,
    pub f: TestFunction,
    pub g: TestFunction,
    pub replicas: u64,
    pub seed: u64,
    /// Accepted range of the covariance ratio at the largest `N`.
    pub ratio_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GffRow {
    pub n: usize,
    pub observed: f64,
    pub observed_se: f64,
    pub predicted: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    /// `Var(remainder) / Var(N^{d/2} <Phi_N, f>)`.
    pub remainder_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GffReport {
    /// Infinite-volume `G(o,o)`.
    pub green_origin: f64,
    /// Box Green function at the box center, the variance base of the expansion.
    pub green_center: f64,
    /// `G_box(c,c)^p (2p+1)!!`.
    pub c1: f64,
    /// `G(o,o)^p (2p+1)!!` with the infinite-volume value.
    pub c1_infinite_volume: f64,
    pub rows: Vec<GffRow>,
    /// `ratio(N_max) - ratio(N_min)`.
    pub drift: f64,
    pub verdicts: Vec<Verdict>,
}

fn double_factorial(n: u32) -> f64 {
    (1..=n).rev().step_by(2).map(f64::from).product()
}

/// Covariance of `N^{d/2}<Phi_N, f>` and `N^{d/2}<Phi_N, g>` for `H = x^{2p+1}` against
/// `c_1^2 N^{-d} sum_{j,k} f(j/N) g(k/N) G_box(j,k)`, plus the share of the variance
/// not carried by the linear term `c_1 N^{-d/2} sum_j X_j f(j/N)`.
pub fn gff_odd_power_verdict(cfg: &GffConfig) -> Result<GffReport> {
    if cfg.d < 3 {
        return Err(Error::Dimension { got: cfg.d, need: ">= 3" });
    }
    if cfg.p == 0 || cfg.n_list.is_empty() {
        return Err(Error::Invalid("need p >= 1 and a nonempty N list".into()));
    }
    let sampler = GffSampler::new(cfg.d, cfg.m)?;
    let center = vec![cfg.m / 2; cfg.d];
    let green_center = box_green(cfg.d, cfg.m, &center, &center);
    let green_origin = discrete_green(cfg.d, &vec![0; cfg.d], DEFAULT_TOL)?;
    let power = 2 * cfg.p + 1;
    let mut mono = vec![0.0; power as usize + 1];
    mono[power as usize] = 1.0;
    let expansion = expand_polynomial(&mono, green_center, power)?;
    let c1 = expansion.coeff(1);
    let run = run_replicas(&ReplicaConfig {
        source: FieldSource::GffBox { d: cfg.d, m: cfg.m },
        gradient_axis: None,
        observable: FieldObservable::from_expansion(expansion),
        test_functions: vec![cfg.f.clone(), cfg.g.clone()],
        n_list: cfg.n_list.clone(),
        stats: vec![
            StatKind::Functional { f: 0, normalization: Normalization::Centered },
            StatKind::Functional { f: 1, normalization: Normalization::Centered },
            StatKind::Component { f: 0, q: 1 },
        ],
        replicas: cfg.replicas,
        seed: cfg.seed,
        c_m: None,
    })?;
    let st = strides(&vec![cfg.m; cfg.d]);
    let mut rows = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let (a, b, lin) = (3 * ni, 3 * ni + 1, 3 * ni + 2);
        let h = lattice::half_width(n);
        let embed = |f: &TestFunction| {
            let mut out = vec![0.0; cfg.m.pow(cfg.d as u32)];
            for (site, w) in lattice::window_sites(cfg.d, n).iter().zip(f.weights(cfg.d, n)) {
                let off: usize = site
                    .iter()
                    .zip(&st)
                    .map(|(&j, s)| (j + (cfg.m / 2) as i64) as usize * s)
                    .sum();
                out[off] = w;
            }
            out
        };
        debug_assert!(h <= cfg.m / 2);
        let predicted = c1 * c1 * (n as f64).powi(-(cfg.d as i32)) * sampler.green_form(&embed(&cfg.f), &embed(&cfg.g))?;
        let xa = run.column(a);
        let xb = run.column(b);
        let (observed, observed_se) = super::jackknife_cov_se(&xa, &xb);
        let rem: Vec<f64> = xa.iter().zip(run.column(lin)).map(|(t, l)| t - l).collect();
        let (rem_var, _) = super::jackknife_cov_se(&rem, &rem);
        let (tot_var, _) = super::jackknife_cov_se(&xa, &xa);
        rows.push(GffRow {
            n,
            observed,
            observed_se,
            predicted,
            ratio: observed / predicted,
            ratio_se: observed_se / predicted.abs(),
            remainder_share: rem_var / tot_var,
        });
    }
    let last = rows.last().expect("nonempty");
    let mut verdicts = vec![Verdict::new(
        format!("gff_ratio[N={}]", last.n),
        last.ratio,
        1.0,
        Rule::Range { lo: cfg.ratio_range.0, hi: cfg.ratio_range.1 },
    )];
    if rows.len() >= 2 {
        let decreasing = rows.windows(2).all(|w| w[1].remainder_share < w[0].remainder_share);
        verdicts.push(Verdict::flag("gff_remainder_share_decreasing", decreasing));
    }
    Ok(GffReport {
        green_origin,
        green_center,
        c1,
        c1_infinite_volume: green_origin.powi(cfg.p as i32) * double_factorial(power),
        drift: last.ratio - rows[0].ratio,
        rows,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c1_for_cube_is_three_g() {
        assert_eq!(double_factorial(3), 3.0);
        assert_eq!(double_factorial(5), 15.0);
        let e = expand_polynomial(&[0.0, 0.0, 0.0, 1.0], 0.25, 3).unwrap();
        assert!((e.coeff(1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn small_run_is_consistent() {
        let cfg = GffConfig {
            d: 3,
            p: 1,
            m: 16,
            n_list: vec![4, 8],
            f: TestFunction::ConstantOne,
            g: TestFunction::ConstantOne,
            replicas: 300,
            seed: 5,
            ratio_range: (0.7, 1.3),
        };
        let rep = gff_odd_power_verdict(&cfg).unwrap();
        assert!(rep.green_center < rep.green_origin);
        assert!(rep.verdicts[0].pass, "{rep:?}");
        let mut low = cfg.clone();
        low.d = 2;
        assert!(matches!(gff_odd_power_verdict(&low), Err(Error::Dimension { .. })));
    }
}
