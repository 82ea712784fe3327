//! Monte Carlo accumulation and pass/fail verdicts.

mod engine;
mod gff;
mod tightness;

pub use engine::{run_replicas, FieldSource, FieldObservable, ReplicaConfig, ReplicaRun, StatKey, StatKind, StatRow};
pub use gff::{gff_odd_power_verdict, GffConfig, GffReport, GffRow};
pub use tightness::{tightness_survey, TightnessReport, TightnessRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Streaming moments of a vector statistic, mergeable in any order.
///
/// Central sums up to order four per component and the cross-product matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    m3: Vec<f64>,
    m4: Vec<f64>,
    /// Row-major `k x k` co-moment sums.
    cross: Vec<f64>,
}

impl ReplicaAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            m3: vec![0.0; dim],
            m4: vec![0.0; dim],
            cross: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim());
        let k = self.dim();
        let single = Self {
            count: 1,
            mean: x.to_vec(),
            m2: vec![0.0; k],
            m3: vec![0.0; k],
            m4: vec![0.0; k],
            cross: vec![0.0; k * k],
        };
        self.merge(&single);
    }

    /// Pairwise combination of central sums.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.dim(), other.dim());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let k = self.dim();
        let delta: Vec<f64> = (0..k).map(|i| other.mean[i] - self.mean[i]).collect();
        for i in 0..k {
            for j in 0..k {
                self.cross[i * k + j] += other.cross[i * k + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for i in 0..k {
            let d = delta[i];
            let (a2, a3, a4) = (self.m2[i], self.m3[i], self.m4[i]);
            let (b2, b3, b4) = (other.m2[i], other.m3[i], other.m4[i]);
            self.m4[i] = a4
                + b4
                + d.powi(4) * na * nb * (na * na - na * nb + nb * nb) / n.powi(3)
                + 6.0 * d * d * (na * na * b2 + nb * nb * a2) / (n * n)
                + 4.0 * d * (na * b3 - nb * a3) / n;
            self.m3[i] = a3 + b3 + d.powi(3) * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * b2 - nb * a2) / n;
            self.m2[i] = a2 + b2 + d * d * na * nb / n;
            self.mean[i] += d * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Unbiased variance.
    pub fn variance(&self, i: usize) -> f64 {
        self.m2[i] / (self.count as f64 - 1.0)
    }

    pub fn se_mean(&self, i: usize) -> f64 {
        (self.variance(i) / self.count as f64).sqrt()
    }

    /// Large-sample standard error of [`Self::variance`] from the fourth central moment.
    pub fn se_variance(&self, i: usize) -> f64 {
        let n = self.count as f64;
        let mu4 = self.m4[i] / n;
        let s2 = self.variance(i);
        ((mu4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
    }

    /// `mu_4 / mu_2^2` with population moments.
    pub fn kurtosis(&self, i: usize) -> f64 {
        let n = self.count as f64;
        n * self.m4[i] / (self.m2[i] * self.m2[i])
    }

    pub fn skewness(&self, i: usize) -> f64 {
        let n = self.count as f64;
        n.sqrt() * self.m3[i] / self.m2[i].powf(1.5)
    }

    /// Unbiased covariance.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.cross[i * self.dim() + j] / (self.count as f64 - 1.0)
    }
}

/// Pass/fail rule of a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// `|observed - predicted| <= tol`.
    Absolute { tol: f64 },
    /// `|observed - predicted| <= k se`.
    StandardErrors { k: f64, se: f64 },
    /// `|observed - predicted| <= tol |predicted|`.
    Relative { tol: f64 },
    /// `lo <= observed <= hi`.
    Range { lo: f64, hi: f64 },
    /// `observed > min`.
    Above { min: f64 },
    /// `observed <= max`.
    AtMost { max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub observed: f64,
    pub predicted: f64,
    pub rule: Rule,
    pub pass: bool,
}

impl Verdict {
    pub fn new(name: impl Into<String>, observed: f64, predicted: f64, rule: Rule) -> Self {
        let diff = (observed - predicted).abs();
        let pass = match rule {
            Rule::Absolute { tol } => diff <= tol,
            Rule::StandardErrors { k, se } => diff <= k * se,
            Rule::Relative { tol } => diff <= tol * predicted.abs(),
            Rule::Range { lo, hi } => (lo..=hi).contains(&observed),
            Rule::Above { min } => observed > min,
            Rule::AtMost { max } => observed <= max,
        };
        Self { name: name.into(), observed, predicted, rule, pass: pass && observed.is_finite() }
    }

    /// Boolean check with no numeric comparison behind it.
    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        let v = if pass { 1.0 } else { 0.0 };
        Self::new(name, v, 1.0, Rule::Absolute { tol: 0.0 })
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against `N(0, 1)`, Stephens' asymptotic p-value.
pub fn ks_normal_test(values: &[f64]) -> Result<KsResult> {
    let n = values.len();
    if n < 100 {
        return Err(Error::TooFewSamples { need: 100, got: n });
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = normal_cdf(v);
            ((i + 1) as f64 / nf - c).max(c - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    let sq = nf.sqrt();
    Ok(KsResult { statistic, p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * statistic) })
}

/// Leave-one-out covariances of columns `a` and `b`, for jackknife errors.
fn jackknife_cov_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ca: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let sab: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    let cov = sab / (n - 1.0);
    // sums over centered data: S_a = S_b = 0
    let loo: Vec<f64> = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| (sab - x * y - x * y / (n - 1.0)) / (n - 2.0))
        .collect();
    let mean = loo.iter().sum::<f64>() / n;
    let var = (n - 1.0) / n * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (cov, var.sqrt())
}

/// Entrywise comparison of the empirical covariance of `samples` (one row per replica)
/// against `predicted`, each entry within `k` jackknife standard errors.
pub fn covariance_verdict(samples: &[Vec<f64>], predicted: &[Vec<f64>], k: f64, names: &[String]) -> Result<Vec<Verdict>> {
    let dim = predicted.len();
    if dim < 2 || names.len() != dim || predicted.iter().any(|r| r.len() != dim) {
        return Err(Error::Invalid("covariance verdict needs a square prediction of size >= 2 with names".into()));
    }
    if samples.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, got: samples.len() });
    }
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::SizeMismatch { expected: dim, got: samples[0].len() });
    }
    let cols: Vec<Vec<f64>> = (0..dim).map(|i| samples.iter().map(|s| s[i]).collect()).collect();
    let mut out = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            let (cov, se) = jackknife_cov_se(&cols[i], &cols[j]);
            out.push(Verdict::new(
                format!("cov[{},{}]", names[i], names[j]),
                cov,
                predicted[i][j],
                Rule::StandardErrors { k, se },
            ));
        }
    }
    Ok(out)
}

/// Empirical variance against a prediction within `k` standard errors.
pub fn variance_verdict(name: impl Into<String>, samples: &[f64], predicted: f64, k: f64) -> Verdict {
    let mut acc = ReplicaAccumulator::new(1);
    for &s in samples {
        acc.push(&[s]);
    }
    Verdict::new(name, acc.variance(0), predicted, Rule::StandardErrors { k, se: acc.se_variance(0) })
}

/// Weighted least-squares slope of `y` on `x` with per-point standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trend {
    pub slope: f64,
    pub se: f64,
}

pub fn weighted_slope(x: &[f64], y: &[f64], se: &[f64]) -> Result<Trend> {
    if x.len() < 2 || x.len() != y.len() || x.len() != se.len() {
        return Err(Error::Invalid("trend fit needs at least two points with errors".into()));
    }
    let w: Vec<f64> = se.iter().map(|s| 1.0 / (s * s).max(f64::MIN_POSITIVE)).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = w.iter().zip(x.iter().zip(y)).map(|(w, (x, y))| w * (x - mx) * (y - my)).sum();
    Ok(Trend { slope: sxy / sxx, se: (1.0 / sxx).sqrt() })
}
