//! Replica loop: sample, window, evaluate statistics, merge.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{sobolev_norm_sq, SobolevProjector};
use crate::chaos::{chaos_component_weighted, normalize, Normalization, TestFunction};
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::hermite::HermiteExpansion;
use crate::sampler::{extract_window, gradient_field, FieldSample, GffSampler, StationarySampler, Window};
use crate::stats::ReplicaAccumulator;

/// Replicas per work unit; accumulators merge unit by unit in index order.
const CHUNK: u64 = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Torus { model: CovarianceModel, m: usize },
    GffBox { d: usize, m: usize },
}

impl FieldSource {
    pub fn dimension(&self) -> usize {
        match self {
            Self::Torus { model, .. } => model.dimension(),
            Self::GffBox { d, .. } => *d,
        }
    }
}

enum Sampler {
    Torus(StationarySampler),
    Box(GffSampler),
}

impl Sampler {
    fn sample(&self, seed: u64, replica: u64) -> FieldSample {
        match self {
            Self::Torus(s) => s.sample(seed, replica),
            Self::Box(s) => s.sample(seed, replica),
        }
    }
}

/// `H` as an expansion plus an exact evaluator (the expansion may be truncated).
#[derive(Clone)]
pub struct FieldObservable {
    pub expansion: HermiteExpansion,
    pub eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl FieldObservable {
    /// Evaluate through the expansion itself; exact for polynomial `H`.
    pub fn from_expansion(expansion: HermiteExpansion) -> Self {
        let e = expansion.clone();
        Self { expansion, eval: Arc::new(move |x| e.eval(x)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "stat", rename_all = "snake_case")]
pub enum StatKind {
    /// `<Phi_N, f_i>` under a normalization.
    Functional { f: usize, normalization: Normalization },
    /// `S_{N,q}(f_i)`.
    Component { f: usize, q: u32 },
    /// `||Phi_N||^2_{H^{-alpha}}` over modes `k_i <= k_max`.
    SobolevNorm { alpha: f64, k_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatKey {
    pub n: usize,
    pub kind: StatKind,
}

pub struct ReplicaConfig {
    pub source: FieldSource,
    /// Replace the field by its forward difference along this axis.
    pub gradient_axis: Option<usize>,
    pub observable: FieldObservable,
    pub test_functions: Vec<TestFunction>,
    pub n_list: Vec<usize>,
    /// Evaluated for every `N` in `n_list`.
    pub stats: Vec<StatKind>,
    pub replicas: u64,
    pub seed: u64,
    /// `C_m`, required by `clt_scaled`.
    pub c_m: Option<f64>,
}

/// One CSV-ready value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRow {
    pub replica_index: u64,
    pub n: usize,
    pub f: String,
    pub q: String,
    pub normalization: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicaRun {
    pub keys: Vec<StatKey>,
    /// `values[r][i]` is statistic `keys[i]` of replica `r`.
    pub values: Vec<Vec<f64>>,
    pub accumulator: ReplicaAccumulator,
    labels: Vec<String>,
}

impl ReplicaRun {
    pub fn find(&self, key: &StatKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i]).collect()
    }

    pub fn rows(&self) -> Vec<StatRow> {
        let mut out = Vec::with_capacity(self.values.len() * self.keys.len());
        for (r, vals) in self.values.iter().enumerate() {
            for (key, &value) in self.keys.iter().zip(vals) {
                let (f, q, normalization) = match key.kind {
                    StatKind::Functional { f, normalization } => {
                        (self.labels[f].clone(), "all".to_string(), normalization.as_str().to_string())
                    }
                    StatKind::Component { f, q } => (self.labels[f].clone(), q.to_string(), "centered".to_string()),
                    StatKind::SobolevNorm { alpha, k_max } => {
                        ("-".to_string(), "all".to_string(), format!("sobolev(alpha={alpha};k_max={k_max})"))
                    }
                };
                out.push(StatRow { replica_index: r as u64, n: key.n, f, q, normalization, value });
            }
        }
        out
    }
}

struct Prepared {
    d: usize,
    m: usize,
    sampler: Sampler,
    /// `weights[n_index][f]`.
    weights: Vec<Vec<Vec<f64>>>,
    projectors: Vec<Vec<(usize, SobolevProjector)>>,
}

fn prepare(cfg: &ReplicaConfig) -> Result<Prepared> {
    let d = cfg.source.dimension();
    let (sampler, m) = match &cfg.source {
        FieldSource::Torus { model, m } => (Sampler::Torus(StationarySampler::new(model, *m)?), *m),
        FieldSource::GffBox { d, m } => (Sampler::Box(GffSampler::new(*d, *m)?), *m),
    };
    if let Some(a) = cfg.gradient_axis {
        if a >= d {
            return Err(Error::Invalid(format!("gradient axis {a} out of range for d={d}")));
        }
    }
    for f in &cfg.test_functions {
        f.validate(Some(d))?;
    }
    for s in &cfg.stats {
        match *s {
            StatKind::Functional { f, normalization } => {
                if f >= cfg.test_functions.len() {
                    return Err(Error::Invalid(format!("statistic refers to test function {f}")));
                }
                if normalization == Normalization::CltScaled && !cfg.c_m.is_some_and(|c| c > 0.0) {
                    return Err(Error::Invalid("clt_scaled statistics need C_m > 0".into()));
                }
            }
            StatKind::Component { f, q } => {
                if f >= cfg.test_functions.len() || q == 0 {
                    return Err(Error::Invalid(format!("invalid component statistic f={f} q={q}")));
                }
            }
            StatKind::SobolevNorm { alpha, k_max } => {
                if alpha <= 0.0 || k_max == 0 {
                    return Err(Error::Invalid(format!("invalid Sobolev statistic alpha={alpha} k_max={k_max}")));
                }
            }
        }
    }
    let weights = cfg
        .n_list
        .iter()
        .map(|&n| cfg.test_functions.iter().map(|f| f.weights(d, n)).collect())
        .collect();
    let projectors = cfg
        .n_list
        .iter()
        .map(|&n| {
            let mut ks: Vec<usize> = cfg
                .stats
                .iter()
                .filter_map(|s| match s {
                    StatKind::SobolevNorm { k_max, .. } => Some(*k_max),
                    _ => None,
                })
                .collect();
            ks.sort_unstable();
            ks.dedup();
            ks.into_iter().map(|k| (k, SobolevProjector::new(d, n, k))).collect()
        })
        .collect();
    Ok(Prepared { d, m, sampler, weights, projectors })
}

fn replica_values(cfg: &ReplicaConfig, p: &Prepared, r: u64) -> Result<Vec<f64>> {
    let mut field = p.sampler.sample(cfg.seed, r);
    if let Some(axis) = cfg.gradient_axis {
        field = gradient_field(&field, axis)?;
    }
    let e = &cfg.observable.expansion;
    let mut out = Vec::with_capacity(cfg.n_list.len() * cfg.stats.len());
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let window = extract_window(&field, &Window::centered(p.d, p.m, field.meta.kind, n))?;
        let centered: Vec<f64> = window.iter().map(|&x| (cfg.observable.eval)(x) - e.h0).collect();
        for s in &cfg.stats {
            let v = match *s {
                StatKind::Functional { f, normalization } => {
                    let sum: f64 = centered.iter().zip(&p.weights[ni][f]).map(|(a, b)| a * b).sum();
                    normalize(sum * (n as f64).powi(-(p.d as i32)), p.d, n, normalization, cfg.c_m)?
                }
                StatKind::Component { f, q } => {
                    chaos_component_weighted(&window, q, e.coeff(q), e.variance_base, &p.weights[ni][f], p.d, n)?.value
                }
                StatKind::SobolevNorm { alpha, k_max } => {
                    let proj = &p.projectors[ni].iter().find(|(k, _)| *k == k_max).expect("prepared").1;
                    sobolev_norm_sq(&proj.sobolev(&centered, alpha)?).value
                }
            };
            out.push(v);
        }
    }
    Ok(out)
}

/// Run `R` replicas. Deterministic given the config: replica `r` always uses stream `r`
/// of the seed, and accumulators merge in fixed chunk order.
pub fn run_replicas(cfg: &ReplicaConfig) -> Result<ReplicaRun> {
    let p = prepare(cfg)?;
    if cfg.n_list.contains(&0) {
        return Err(Error::Invalid("window sizes must be positive".into()));
    }
    let keys: Vec<StatKey> = cfg
        .n_list
        .iter()
        .flat_map(|&n| cfg.stats.iter().map(move |&kind| StatKey { n, kind }))
        .collect();
    let chunks = cfg.replicas.div_ceil(CHUNK);
    let parts: Vec<Result<(Vec<Vec<f64>>, ReplicaAccumulator)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = ReplicaAccumulator::new(keys.len());
            let mut vals = Vec::new();
            for r in c * CHUNK..((c + 1) * CHUNK).min(cfg.replicas) {
                let v = replica_values(cfg, &p, r).map_err(|e| Error::Replica { replica: r, source: Box::new(e) })?;
                acc.push(&v);
                vals.push(v);
            }
            Ok((vals, acc))
        })
        .collect();
    let mut values = Vec::with_capacity(cfg.replicas as usize);
    let mut accumulator = ReplicaAccumulator::new(keys.len());
    for part in parts {
        let (v, a) = part?;
        values.extend(v);
        accumulator.merge(&a);
    }
    Ok(ReplicaRun { keys, values, accumulator, labels: cfg.test_functions.iter().map(|f| f.label()).collect() })
}
