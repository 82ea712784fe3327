//! The field `<Phi_N, f> = N^{-d} sum_{j in B_N} (H(X_j) - h0) f(j/N)`, its chaos
//! components and their exact second-order moment formulas.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::phi_1d;
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::hermite::{eval_hermite_scaled, factorial, HermiteExpansion};
use crate::lattice;
use crate::quadrature::{advance, integrate_cube};

/// Upper limit on `|B_N|^4` for the brute-force contraction sums.
pub const CONTRACTION_GUARD: f64 = 1e10;

/// Direct overlap sums are used below this many `(u, k)` pairs, FFT autocorrelation above.
const DIRECT_PAIR_LIMIT: f64 = 1e8;

/// User-supplied test function with a declared bound on `|f|`.
#[derive(Clone)]
pub struct CustomFunction {
    pub name: String,
    pub sup_bound: f64,
    pub eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunction").field("name", &self.name).field("sup_bound", &self.sup_bound).finish()
    }
}

impl PartialEq for CustomFunction {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.eval, &other.eval)
    }
}

/// Test function on `D = [-1/2, 1/2]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `1_Q` for `Q = prod [lo_i, hi_i]`, or `|Q|^{-1/2} 1_Q` when normalized.
    BoxIndicator {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default)]
        normalized: bool,
    },
    Eigenfunction { k: Vec<usize> },
    ConstantOne,
    #[serde(skip)]
    Custom(CustomFunction),
}

/// One-dimensional factor of a separable test function.
#[derive(Clone, Copy)]
enum Factor {
    Interval(f64, f64),
    Sine(usize),
}

fn factor_integral(a: Factor, b: Factor) -> f64 {
    match (a, b) {
        (Factor::Interval(a0, a1), Factor::Interval(b0, b1)) => (a1.min(b1) - a0.max(b0)).max(0.0),
        (Factor::Interval(lo, hi), Factor::Sine(k)) | (Factor::Sine(k), Factor::Interval(lo, hi)) => {
            let lo = lo.max(-0.5);
            let hi = hi.min(0.5);
            if hi <= lo {
                return 0.0;
            }
            let w = k as f64 * PI;
            std::f64::consts::SQRT_2 * ((w * (lo + 0.5)).cos() - (w * (hi + 0.5)).cos()) / w
        }
        (Factor::Sine(k), Factor::Sine(l)) => {
            if k == l {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl TestFunction {
    pub fn box_indicator(lo: Vec<f64>, hi: Vec<f64>, normalized: bool) -> Result<Self> {
        let f = Self::BoxIndicator { lo, hi, normalized };
        f.validate(None)?;
        Ok(f)
    }

    pub fn custom(name: &str, sup_bound: f64, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(CustomFunction { name: name.to_string(), sup_bound, eval: Arc::new(eval) })
    }

    /// Check the shape against `D` and, if given, the dimension.
    pub fn validate(&self, d: Option<usize>) -> Result<()> {
        let dim_ok = |got: usize| d.is_none_or(|d| d == got);
        match self {
            Self::BoxIndicator { lo, hi, .. } => {
                if lo.len() != hi.len() || !dim_ok(lo.len()) {
                    return Err(Error::Invalid(format!(
                        "box corners have dimensions {} and {}, expected {d:?}",
                        lo.len(),
                        hi.len()
                    )));
                }
                for (a, b) in lo.iter().zip(hi) {
                    if !(a < b) || *a < -0.5 || *b > 0.5 {
                        return Err(Error::Invalid(format!(
                            "box side [{a}, {b}] must be nonempty and inside [-1/2, 1/2]"
                        )));
                    }
                }
            }
            Self::Eigenfunction { k } => {
                if k.is_empty() || k.contains(&0) || !dim_ok(k.len()) {
                    return Err(Error::Invalid(format!("eigenfunction index {k:?} invalid for d={d:?}")));
                }
            }
            Self::ConstantOne => {}
            Self::Custom(c) => {
                if !(c.sup_bound.is_finite() && c.sup_bound >= 0.0) {
                    return Err(Error::Invalid(format!("custom function {} needs a finite sup bound", c.name)));
                }
            }
        }
        Ok(())
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match self {
            Self::BoxIndicator { lo, hi, normalized } => {
                let side = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(":");
                format!("{}box[{}..{}]", if *normalized { "n" } else { "" }, side(lo), side(hi))
            }
            Self::Eigenfunction { k } => {
                format!("phi[{}]", k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            }
            Self::ConstantOne => "one".into(),
            Self::Custom(c) => c.name.clone(),
        }
    }

    fn scale(&self) -> f64 {
        match self {
            Self::BoxIndicator { lo, hi, normalized: true } => {
                let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
                vol.powf(-0.5)
            }
            _ => 1.0,
        }
    }

    fn factors(&self, d: usize) -> Option<Vec<Factor>> {
        match self {
            Self::BoxIndicator { lo, hi, .. } => Some(lo.iter().zip(hi).map(|(&a, &b)| Factor::Interval(a, b)).collect()),
            Self::Eigenfunction { k } => Some(k.iter().map(|&k| Factor::Sine(k)).collect()),
            Self::ConstantOne => Some(vec![Factor::Interval(-0.5, 0.5); d]),
            Self::Custom(_) => None,
        }
    }

    /// `f(x)`; box membership includes the boundary.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::BoxIndicator { lo, hi, .. } => {
                let inside = x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v <= *b);
                if inside {
                    self.scale()
                } else {
                    0.0
                }
            }
            Self::Eigenfunction { k } => k.iter().zip(x).map(|(&k, &xi)| phi_1d(k, xi)).product(),
            Self::ConstantOne => 1.0,
            Self::Custom(c) => (c.eval)(x),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            Self::BoxIndicator { .. } => self.scale(),
            Self::Eigenfunction { k } => 2f64.powf(k.len() as f64 / 2.0),
            Self::ConstantOne => 1.0,
            Self::Custom(c) => c.sup_bound,
        }
    }

    /// `<f, g>_{L^2(D)}`: exact for the built-in kinds, 64-node Gauss-Legendre otherwise.
    pub fn l2_inner(&self, other: &TestFunction, d: usize) -> f64 {
        match (self.factors(d), other.factors(d)) {
            (Some(a), Some(b)) => {
                self.scale() * other.scale() * a.iter().zip(&b).map(|(&x, &y)| factor_integral(x, y)).product::<f64>()
            }
            _ => integrate_cube(d, 64, |x| self.eval(x) * other.eval(x)),
        }
    }

    /// `f(j/N)` over `B_N` in row-major order.
    pub fn weights(&self, d: usize, n: usize) -> Vec<f64> {
        lattice::window_points(d, n).iter().map(|x| self.eval(x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `N^{-d} sum (H(X_j) - h0) f(j/N)`.
    Raw,
    /// Fluctuation scale `N^{d/2} raw = sum_q S_{N,q}(f)`.
    Centered,
    /// `N^{d/2} raw / sqrt(C_m)`.
    CltScaled,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Centered => "centered",
            Self::CltScaled => "clt_scaled",
        }
    }
}

/// A realized statistic; `q = None` for the full functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosStatistic {
    pub n: usize,
    pub q: Option<u32>,
    pub value: f64,
    pub normalization: Normalization,
}

fn check_len(values: &[f64], d: usize, n: usize) -> Result<()> {
    let expected = lattice::window_len(d, n);
    if values.len() != expected {
        return Err(Error::SizeMismatch { expected, got: values.len() });
    }
    Ok(())
}

/// Rescale a raw functional value.
pub fn normalize(raw: f64, d: usize, n: usize, normalization: Normalization, c_m: Option<f64>) -> Result<f64> {
    let fluct = (n as f64).powf(d as f64 / 2.0) * raw;
    match normalization {
        Normalization::Raw => Ok(raw),
        Normalization::Centered => Ok(fluct),
        Normalization::CltScaled => match c_m {
            Some(c) if c > 0.0 => Ok(fluct / c.sqrt()),
            _ => Err(Error::Invalid(format!("clt_scaled needs C_m > 0, got {c_m:?}"))),
        },
    }
}

/// `<Phi_N, f>` from precomputed weights `f(j/N)` and an evaluator for `H`.
#[allow(clippy::too_many_arguments)]
pub fn functional_weighted(
    window: &[f64],
    h: &dyn Fn(f64) -> f64,
    h0: f64,
    weights: &[f64],
    d: usize,
    n: usize,
    normalization: Normalization,
    c_m: Option<f64>,
) -> Result<ChaosStatistic> {
    check_len(window, d, n)?;
    check_len(weights, d, n)?;
    let s: f64 = window.iter().zip(weights).map(|(&x, &w)| (h(x) - h0) * w).sum();
    let raw = s * (n as f64).powi(-(d as i32));
    Ok(ChaosStatistic { n, q: None, value: normalize(raw, d, n, normalization, c_m)?, normalization })
}

/// `<Phi_N, f>` with `H` given by its (finite) expansion.
pub fn functional(
    window: &[f64],
    e: &HermiteExpansion,
    f: &TestFunction,
    d: usize,
    n: usize,
    normalization: Normalization,
    c_m: Option<f64>,
) -> Result<ChaosStatistic> {
    check_len(window, d, n)?;
    functional_weighted(window, &|x| e.eval(x), e.h0, &f.weights(d, n), d, n, normalization, c_m)
}

/// `S_{N,q}(f) = N^{-d/2} c_q sum_j H_q^g(X_j) w_j` for weights `w_j = f(j/N)`.
pub fn chaos_component_weighted(
    window: &[f64],
    q: u32,
    c_q: f64,
    variance_base: f64,
    weights: &[f64],
    d: usize,
    n: usize,
) -> Result<ChaosStatistic> {
    check_len(window, d, n)?;
    check_len(weights, d, n)?;
    let s: f64 = window
        .iter()
        .zip(weights)
        .map(|(&x, &w)| eval_hermite_scaled(q as usize, x, variance_base) * w)
        .sum();
    Ok(ChaosStatistic {
        n,
        q: Some(q),
        value: c_q * s * (n as f64).powf(-(d as f64) / 2.0),
        normalization: Normalization::Centered,
    })
}

pub fn chaos_component(
    window: &[f64],
    q: u32,
    c_q: f64,
    variance_base: f64,
    f: &TestFunction,
    d: usize,
    n: usize,
) -> Result<ChaosStatistic> {
    check_len(window, d, n)?;
    chaos_component_weighted(window, q, c_q, variance_base, &f.weights(d, n), d, n)
}

/// `sum_{j,k in B_N} a_j b_k rho(j - k)^q` via the lag-then-overlap order.
fn lag_sum(q: u32, model: &CovarianceModel, a: &[f64], b: &[f64], d: usize, n: usize, absolute: bool) -> f64 {
    let h = lattice::half_width(n) as i64;
    let side = lattice::side(n);
    let pw = |r: f64| {
        let p = r.powi(q as i32);
        if absolute {
            p.abs()
        } else {
            p
        }
    };
    if let Some(entries) = model.sparse_entries() {
        let mut terms: Vec<(Vec<i64>, f64)> = entries.map(|(u, &r)| (u.clone(), pw(r))).collect();
        terms.sort_by(|x, y| x.0.cmp(&y.0));
        return terms.iter().map(|(u, p)| p * overlap(a, b, u, side, h)).sum();
    }
    let lags = (2 * side - 1) as f64;
    if lags.powi(d as i32) * (side as f64).powi(d as i32) <= DIRECT_PAIR_LIMIT {
        let mut idx = vec![0usize; d];
        let mut total = 0.0;
        loop {
            let u: Vec<i64> = idx.iter().map(|&i| i as i64 - 2 * h).collect();
            total += pw(model.rho(&u)) * overlap(a, b, &u, side, h);
            if !advance(&mut idx, 2 * side - 1) {
                break;
            }
        }
        return total;
    }
    let corr = cross_correlation(a, b, d, side);
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    let mut flat = 0;
    loop {
        let u: Vec<i64> = idx.iter().map(|&i| i as i64 - 2 * h).collect();
        total += pw(model.rho(&u)) * corr[flat];
        flat += 1;
        if !advance(&mut idx, 2 * side - 1) {
            break;
        }
    }
    total
}

/// `sum_{k in B_N cap (B_N - u)} a_{k+u} b_k`.
fn overlap(a: &[f64], b: &[f64], u: &[i64], side: usize, h: i64) -> f64 {
    let d = u.len();
    let mut lo = vec![0usize; d];
    let mut len = vec![0usize; d];
    for i in 0..d {
        // k in [-h, h] and k + u in [-h, h]
        let k0 = (-h).max(-h - u[i]);
        let k1 = h.min(h - u[i]);
        if k1 < k0 {
            return 0.0;
        }
        lo[i] = (k0 + h) as usize;
        len[i] = (k1 - k0 + 1) as usize;
    }
    let st = crate::fft::strides(&vec![side; d]);
    let shift: i64 = u.iter().zip(&st).map(|(&ui, &s)| ui * s as i64).sum();
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let kb: usize = idx.iter().zip(&lo).zip(&st).map(|((i, l), s)| (i + l) * s).sum();
        total += a[(kb as i64 + shift) as usize] * b[kb];
        let mut carry = true;
        for ax in (0..d).rev() {
            idx[ax] += 1;
            if idx[ax] < len[ax] {
                carry = false;
                break;
            }
            idx[ax] = 0;
        }
        if carry {
            break;
        }
    }
    total
}

/// `C[u] = sum_k a_{k+u} b_k` for `u in [-(side-1), side-1]^d`, by zero-padded FFT.
fn cross_correlation(a: &[f64], b: &[f64], d: usize, side: usize) -> Vec<f64> {
    let p = (2 * side - 1).next_power_of_two();
    let shape = vec![p; d];
    let total = p.pow(d as u32);
    let st_s = crate::fft::strides(&vec![side; d]);
    let st_p = crate::fft::strides(&shape);
    let mut fa = vec![Complex64::default(); total];
    let mut fb = vec![Complex64::default(); total];
    let mut idx = vec![0usize; d];
    loop {
        let s: usize = idx.iter().zip(&st_s).map(|(i, s)| i * s).sum();
        let t: usize = idx.iter().zip(&st_p).map(|(i, s)| i * s).sum();
        fa[t] = Complex64::new(a[s], 0.0);
        fb[t] = Complex64::new(b[s], 0.0);
        if !advance(&mut idx, side) {
            break;
        }
    }
    let fwd = FftNd::new(&shape, false);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    FftNd::new(&shape, true).process(&mut prod);
    let lags = 2 * side - 1;
    let mut out = Vec::with_capacity(lags.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        let t: usize = idx
            .iter()
            .zip(&st_p)
            .map(|(&i, s)| ((i as i64 - (side as i64 - 1)).rem_euclid(p as i64) as usize) * s)
            .sum();
        out.push(prod[t].re / total as f64);
        if !advance(&mut idx, lags) {
            break;
        }
    }
    out
}

/// `Cov(S_{N,q}(f), S_{N,q}(g)) = q! c_q^2 N^{-d} sum_u rho(u)^q sum_k f((k+u)/N) g(k/N)`.
pub fn exact_covariance(q: u32, c_q: f64, model: &CovarianceModel, f: &TestFunction, g: &TestFunction, n: usize) -> f64 {
    let d = model.dimension();
    exact_covariance_weighted(q, c_q, model, &f.weights(d, n), &g.weights(d, n), n)
}

pub fn exact_covariance_weighted(q: u32, c_q: f64, model: &CovarianceModel, a: &[f64], b: &[f64], n: usize) -> f64 {
    let d = model.dimension();
    factorial(q) * c_q * c_q * (n as f64).powi(-(d as i32)) * lag_sum(q, model, a, b, d, n, false)
}

/// `Var(S_{N,q}(f))`, exact at finite `N`.
pub fn exact_variance(q: u32, c_q: f64, model: &CovarianceModel, f: &TestFunction, n: usize) -> f64 {
    let w = f.weights(model.dimension(), n);
    let v = exact_covariance_weighted(q, c_q, model, &w, &w, n);
    let scale = factorial(q) * c_q * c_q * w.iter().map(|x| x * x).sum::<f64>() * model.variance().powi(q as i32);
    assert!(v >= -1e-10 * scale.max(f64::MIN_POSITIVE), "negative variance {v}");
    v.max(0.0)
}

/// `Var(N^{d/2} <Phi_N, f>) = sum_q Var(S_{N,q}(f))` for a finite expansion.
pub fn exact_total_variance(e: &HermiteExpansion, model: &CovarianceModel, f: &TestFunction, n: usize) -> f64 {
    e.coeffs.iter().filter(|c| c.1 != 0.0).map(|&(q, c)| exact_variance(q, c, model, f, n)).sum()
}

/// `sigma_q^2 = q! c_q^2 (sum_u rho(u)^q) int_D f^2`, lattice sum cut at `radius`.
pub fn limit_variance(q: u32, c_q: f64, model: &CovarianceModel, f: &TestFunction, radius: usize) -> Result<f64> {
    let s = model.lq_sum(q, radius)?;
    if !s.converged {
        return Err(Error::Divergent { q, radius, partial: s.partial });
    }
    Ok(factorial(q) * c_q * c_q * s.signed_partial * f.l2_inner(f, model.dimension()))
}

/// Pairwise tree sum, independent of thread scheduling.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// `||s_{N,q} (x)_r s_{N,q}||^2 = c_q^4 N^{-2d} sum_{j_1..j_4} prod f(j_l/N)
/// rho(j_1-j_2)^r rho(j_3-j_4)^r rho(j_1-j_3)^{q-r} rho(j_2-j_4)^{q-r}`.
///
/// With `absolute`, every factor is replaced by its absolute value. The sum is evaluated
/// as `sum_{1,4} w_1 w_4 (A W B)_{14} (B W A)_{14}` with `A = rho^r`, `B = rho^{q-r}`,
/// which is the same finite sum regrouped.
pub fn contraction_norm_sq(
    q: u32,
    r: u32,
    c_q: f64,
    model: &CovarianceModel,
    f: &TestFunction,
    n: usize,
    absolute: bool,
) -> Result<f64> {
    if r == 0 || r >= q {
        return Err(Error::Invalid(format!("contraction order needs 1 <= r <= q-1, got q={q} r={r}")));
    }
    let d = model.dimension();
    let len = lattice::window_len(d, n);
    let iterations = (len as f64).powi(4);
    if iterations > CONTRACTION_GUARD {
        return Err(Error::Infeasible { iterations });
    }
    let sites = lattice::window_sites(d, n);
    let mut w = f.weights(d, n);
    if absolute {
        w.iter_mut().for_each(|v| *v = v.abs());
    }
    let pw = |x: f64, p: u32| {
        let v = x.powi(p as i32);
        if absolute {
            v.abs()
        } else {
            v
        }
    };
    let mut a = vec![0.0; len * len];
    let mut b = vec![0.0; len * len];
    for i in 0..len {
        for j in 0..len {
            let u: Vec<i64> = sites[i].iter().zip(&sites[j]).map(|(x, y)| x - y).collect();
            let rho = model.rho(&u);
            a[i * len + j] = pw(rho, r);
            b[i * len + j] = pw(rho, q - r);
        }
    }
    // T = A W B; A and B are symmetric, so (B W A)_{14} = T_{41}.
    let t: Vec<f64> = (0..len)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &a;
            let b = &b;
            let w = &w;
            (0..len).map(move |l| (0..len).map(|k| a[i * len + k] * w[k] * b[k * len + l]).sum::<f64>())
        })
        .collect();
    let rows: Vec<f64> = (0..len)
        .into_par_iter()
        .map(|i| {
            let terms: Vec<f64> = (0..len).map(|l| w[i] * w[l] * t[i * len + l] * t[l * len + i]).collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(c_q.powi(4) * (n as f64).powi(-2 * d as i32) * pairwise_sum(&rows))
}

/// Empirical fourth moment of a standardized sample with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourthMoment {
    pub m4: f64,
    pub gap: f64,
    pub se: f64,
}

/// `m4 = mean(x^4) / mean(x^2)^2`, the fourth moment after rescaling to unit second moment.
pub fn fourth_moment_gap(samples: &[f64]) -> Result<FourthMoment> {
    let n = samples.len();
    if n < 100 {
        return Err(Error::TooFewSamples { need: 100, got: n });
    }
    let s2: f64 = samples.iter().map(|x| x * x).sum();
    let s4: f64 = samples.iter().map(|x| x.powi(4)).sum();
    let nf = n as f64;
    let m4 = nf * s4 / (s2 * s2);
    let loo: Vec<f64> = samples
        .iter()
        .map(|x| {
            let a = s2 - x * x;
            let b = s4 - x.powi(4);
            (nf - 1.0) * b / (a * a)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / nf;
    let se = ((nf - 1.0) / nf * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt();
    Ok(FourthMoment { m4, gap: m4 - 3.0, se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::expand_polynomial;

    fn nn1() -> CovarianceModel {
        CovarianceModel::finite_support(1, &[(vec![0], 1.0), (vec![1], 0.5)]).unwrap()
    }

    fn double_loop(q: u32, c: f64, model: &CovarianceModel, f: &TestFunction, n: usize) -> f64 {
        let d = model.dimension();
        let sites = lattice::window_sites(d, n);
        let w = f.weights(d, n);
        let mut s = 0.0;
        for (j, wj) in sites.iter().zip(&w) {
            for (k, wk) in sites.iter().zip(&w) {
                let u: Vec<i64> = j.iter().zip(k).map(|(a, b)| a - b).collect();
                s += wj * wk * model.rho(&u).powi(q as i32);
            }
        }
        factorial(q) * c * c * s / (n as f64).powi(d as i32)
    }

    fn quadruple_loop(q: u32, r: u32, c: f64, model: &CovarianceModel, f: &TestFunction, n: usize) -> f64 {
        let d = model.dimension();
        let sites = lattice::window_sites(d, n);
        let w = f.weights(d, n);
        let rho = |a: &[i64], b: &[i64]| model.rho(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
        let mut s = 0.0;
        for (j1, w1) in sites.iter().zip(&w) {
            for (j2, w2) in sites.iter().zip(&w) {
                for (j3, w3) in sites.iter().zip(&w) {
                    for (j4, w4) in sites.iter().zip(&w) {
                        s += w1 * w2 * w3 * w4
                            * rho(j1, j2).powi(r as i32)
                            * rho(j3, j4).powi(r as i32)
                            * rho(j1, j3).powi((q - r) as i32)
                            * rho(j2, j4).powi((q - r) as i32);
                    }
                }
            }
        }
        c.powi(4) * s / (n as f64).powi(2 * d as i32)
    }

    #[test]
    fn functional_examples() {
        let id = HermiteExpansion::from_coefficients(1.0, 0.0, &[(1, 1.0)]).unwrap();
        let one = TestFunction::ConstantOne;
        let v = functional(&[1.0; 5], &id, &one, 1, 5, Normalization::Raw, None).unwrap();
        assert!((v.value - 1.0).abs() < 1e-15);
        let sq = expand_polynomial(&[0.0, 0.0, 1.0], 1.0, 4).unwrap();
        let v = functional(&[0.0; 5], &sq, &one, 1, 5, Normalization::Raw, None).unwrap();
        assert!((v.value + 1.0).abs() < 1e-15);
        assert!(functional(&[0.0; 4], &sq, &one, 1, 5, Normalization::Raw, None).is_err());
        assert!(functional(&[0.0; 5], &sq, &one, 1, 5, Normalization::CltScaled, Some(0.0)).is_err());
    }

    #[test]
    fn functional_matches_direct_loop() {
        let n = 9;
        let window: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 4.0 - 1.5).collect();
        let h2 = HermiteExpansion::from_coefficients(1.0, 0.0, &[(2, 1.0)]).unwrap();
        let f = TestFunction::Eigenfunction { k: vec![1] };
        let got = functional(&window, &h2, &f, 1, n, Normalization::Raw, None).unwrap().value;
        let mut s = 0.0;
        for (i, x) in window.iter().enumerate() {
            let j = i as f64 - 4.0;
            s += (x * x - 1.0) * 2f64.sqrt() * (PI * (j / n as f64 + 0.5)).sin();
        }
        assert!((got - s / n as f64).abs() < 1e-12);
    }

    #[test]
    fn component_examples() {
        let one = TestFunction::ConstantOne;
        let v = chaos_component(&[1.0; 5], 1, 1.0, 1.0, &one, 1, 5).unwrap();
        assert!((v.value - 5f64.sqrt()).abs() < 1e-14);
        let v = chaos_component(&[0.0; 5], 2, 0.7, 1.0, &one, 1, 5).unwrap();
        assert!((v.value + 5f64.sqrt() * 0.7).abs() < 1e-14);
    }

    #[test]
    fn decomposition_identity_for_polynomials() {
        let (d, n) = (2, 7);
        let e = expand_polynomial(&[0.5, -1.0, 0.3, 0.0, 0.2], 1.3, 4).unwrap();
        let f = TestFunction::Eigenfunction { k: vec![2, 1] };
        let window: Vec<f64> = (0..49).map(|i| ((i * 37 % 23) as f64 - 11.0) / 6.0).collect();
        let total = functional(&window, &e, &f, d, n, Normalization::Centered, None).unwrap().value;
        let parts: f64 = (1..=4)
            .map(|q| chaos_component(&window, q, e.coeff(q), 1.3, &f, d, n).unwrap().value)
            .sum();
        assert!((total - parts).abs() < 1e-10);
    }

    #[test]
    fn exact_variance_examples() {
        let delta = CovarianceModel::delta(1);
        let one = TestFunction::ConstantOne;
        assert!((exact_variance(1, 1.0, &delta, &one, 5) - 1.0).abs() < 1e-15);
        for d in 1..=3 {
            assert!((exact_variance(2, 1.0, &CovarianceModel::delta(d), &one, 5) - 2.0).abs() < 1e-14);
        }
        assert!((exact_variance(1, 1.0, &nn1(), &one, 3) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_variance_matches_double_loop() {
        let models = [
            nn1(),
            CovarianceModel::power_law(1, 0.8, 2.5, 1.0).unwrap(),
            CovarianceModel::power_law(2, 0.5, 3.0, 1.0).unwrap(),
        ];
        let fs = |d: usize| {
            vec![
                TestFunction::ConstantOne,
                TestFunction::Eigenfunction { k: vec![2; d] },
                TestFunction::box_indicator(vec![-0.3; d], vec![0.2; d], true).unwrap(),
            ]
        };
        for model in &models {
            let d = model.dimension();
            for f in fs(d) {
                for n in [3, 5, 7, 9] {
                    for q in 1..=4 {
                        let a = exact_variance(q, 0.7, model, &f, n);
                        let b = double_loop(q, 0.7, model, &f, n);
                        assert!((a - b).abs() < 1e-12, "{a} {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn fft_autocorrelation_matches_overlap() {
        let side = 7;
        let a: Vec<f64> = (0..49).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..49).map(|i| (i as f64 * 0.11).cos()).collect();
        let c = cross_correlation(&a, &b, 2, side);
        let mut k = 0;
        for u0 in -6..=6 {
            for u1 in -6..=6 {
                let o = overlap(&a, &b, &[u0, u1], side, 3);
                assert!((c[k] - o).abs() < 1e-12);
                k += 1;
            }
        }
    }

    #[test]
    fn limit_variance_examples() {
        let delta = CovarianceModel::delta(2);
        let one = TestFunction::ConstantOne;
        assert!((limit_variance(2, 1.0, &delta, &one, 4).unwrap() - 2.0).abs() < 1e-14);
        let nb = TestFunction::box_indicator(vec![-0.2, -0.1], vec![0.3, 0.05], true).unwrap();
        assert!((limit_variance(2, 1.0, &delta, &nb, 4).unwrap() - 2.0).abs() < 1e-14);
        let model = CovarianceModel::moving_average(1, 3).unwrap();
        let f = TestFunction::Eigenfunction { k: vec![1] };
        let lim = limit_variance(2, 1.0, &model, &f, 8).unwrap();
        let gaps: Vec<f64> = [9, 17, 33, 65].iter().map(|&n| (exact_variance(2, 1.0, &model, &f, n) - lim).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn inner_products() {
        let p1 = TestFunction::Eigenfunction { k: vec![1, 2] };
        let p2 = TestFunction::Eigenfunction { k: vec![2, 2] };
        assert_eq!(p1.l2_inner(&p2, 2), 0.0);
        assert_eq!(p1.l2_inner(&p1, 2), 1.0);
        let b = TestFunction::box_indicator(vec![-0.4, -0.1], vec![0.1, 0.35], false).unwrap();
        let quad = integrate_cube(2, 64, |x| {
            let inside = (-0.4..=0.1).contains(&x[0]) && (-0.1..=0.35).contains(&x[1]);
            if inside {
                p1.eval(x)
            } else {
                0.0
            }
        });
        assert!((b.l2_inner(&p1, 2) - quad).abs() < 5e-2);
        let exact_1d = TestFunction::box_indicator(vec![-0.4], vec![0.1], false).unwrap();
        let refined: f64 = {
            let (x, w) = crate::quadrature::gauss_legendre(40, -0.4, 0.1);
            x.iter().zip(&w).map(|(x, w)| w * phi_1d(3, *x)).sum()
        };
        assert!((exact_1d.l2_inner(&TestFunction::Eigenfunction { k: vec![3] }, 1) - refined).abs() < 1e-13);
        let c = TestFunction::custom("x0", 0.5, |x| x[0]);
        assert!((c.l2_inner(&c, 1) - 1.0 / 12.0).abs() < 1e-13);
    }

    #[test]
    fn contraction_examples() {
        let one = TestFunction::ConstantOne;
        let delta = CovarianceModel::delta(1);
        assert!((contraction_norm_sq(2, 1, 1.0, &delta, &one, 5, false).unwrap() - 0.2).abs() < 1e-15);
        assert!((contraction_norm_sq(2, 1, 1.0, &delta, &one, 9, false).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        let got = contraction_norm_sq(2, 1, 1.0, &nn1(), &one, 3, false).unwrap();
        assert!((got - quadruple_loop(2, 1, 1.0, &nn1(), &one, 3)).abs() < 1e-12);
        assert!(contraction_norm_sq(2, 2, 1.0, &delta, &one, 3, false).is_err());
        let big = CovarianceModel::delta(3);
        assert!(matches!(contraction_norm_sq(2, 1, 1.0, &big, &one, 9, false), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn contraction_matches_quadruple_loop_and_bound() {
        let model = CovarianceModel::finite_support(1, &[(vec![0], 1.0), (vec![1], -0.4), (vec![2], 0.2)]).unwrap();
        let f = TestFunction::Eigenfunction { k: vec![2] };
        for q in 2..=4 {
            for r in 1..q {
                for n in [3, 5] {
                    let a = contraction_norm_sq(q, r, 0.9, &model, &f, n, false).unwrap();
                    let b = quadruple_loop(q, r, 0.9, &model, &f, n);
                    assert!((a - b).abs() < 1e-12, "{a} {b}");
                    assert!(a <= contraction_norm_sq(q, r, 0.9, &model, &f, n, true).unwrap() + 1e-15);
                }
            }
        }
    }

    #[test]
    fn fourth_moment_examples() {
        let coin: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let fm = fourth_moment_gap(&coin).unwrap();
        assert_eq!(fm.m4, 1.0);
        assert_eq!(fm.gap, -2.0);
        assert!(fourth_moment_gap(&coin[..99]).is_err());
        use rand::Rng;
        let mut rng = crate::rng::replica_rng(42, 0);
        let z: Vec<f64> = (0..100_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let fm = fourth_moment_gap(&z).unwrap();
        assert!(fm.gap.abs() < 4.0 * fm.se, "{fm:?}");
    }
}
