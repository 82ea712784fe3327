//! Probabilists' Hermite polynomials and Hermite expansions of observables.
//!
//! Expansions are taken against `N(0, g)` with `g = variance_base`, in the basis
//! `H_q^g(x) = g^{q/2} H_q(x / sqrt g)` of monic polynomials orthogonal under that law:
//!
//! `H(x) = h0 + sum_{q >= 1} c_q H_q^g(x)`, `E[H_p^g(X) H_q^g(X)] = q! g^q 1{p = q}`.
//!
//! For `g = 1` this is the usual `H = sum c_q H_q`. For lattice fields with covariance
//! `rho`, `E[H_q^g(X_j) H_q^g(X_k)] = q! rho(j - k)^q`.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite;

/// Relative threshold below which a coefficient counts as zero for the rank.
pub const RANK_ZERO_THRESHOLD: f64 = 1e-12;

/// Node-doubling stop criterion for quadrature expansions.
pub const QUADRATURE_TOL: f64 = 1e-10;

const FIRST_NODES: usize = 32;
const MAX_NODES: usize = 512;

/// `H_q(x)` by the three-term recurrence.
pub fn eval_hermite(q: usize, x: f64) -> f64 {
    eval_hermite_scaled(q, x, 1.0)
}

/// `H_q^g(x)`: `H_{q+1} = x H_q - q g H_{q-1}`.
pub fn eval_hermite_scaled(q: usize, x: f64, g: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if q == 0 {
        return prev;
    }
    for k in 1..q {
        let next = x * cur - k as f64 * g * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `H_0^g(x), .., H_qmax^g(x)`.
pub fn hermite_table(q_max: usize, x: f64, g: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if q_max == 0 {
        return;
    }
    out.push(x);
    for k in 1..q_max {
        let next = x * out[k] - k as f64 * g * out[k - 1];
        out.push(next);
    }
}

pub(crate) fn factorial(q: u32) -> f64 {
    (1..=q).map(f64::from).product()
}

/// Hermite expansion of an observable against `N(0, variance_base)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteExpansion {
    pub variance_base: f64,
    pub h0: f64,
    /// `[q, c_q]` for every `q` in `1..=q_max`.
    pub coeffs: Vec<(u32, f64)>,
    pub tail_variance: f64,
}

impl HermiteExpansion {
    /// Build from explicit coefficients; missing orders below the largest are zero.
    pub fn from_coefficients(variance_base: f64, h0: f64, coeffs: &[(u32, f64)]) -> Result<Self> {
        if variance_base <= 0.0 || !variance_base.is_finite() {
            return Err(Error::NonPositiveVariance(variance_base));
        }
        let q_max = coeffs.iter().map(|c| c.0).max().unwrap_or(0);
        if q_max == 0 || coeffs.iter().any(|c| c.0 == 0) {
            return Err(Error::Invalid("Hermite coefficients need orders q >= 1".into()));
        }
        let mut dense: Vec<(u32, f64)> = (1..=q_max).map(|q| (q, 0.0)).collect();
        for &(q, c) in coeffs {
            dense[q as usize - 1].1 += c;
        }
        Ok(Self { variance_base, h0, coeffs: dense, tail_variance: 0.0 })
    }

    pub fn q_max(&self) -> u32 {
        self.coeffs.len() as u32
    }

    /// `c_q`, zero beyond `q_max`.
    pub fn coeff(&self, q: u32) -> f64 {
        if q == 0 {
            return 0.0;
        }
        self.coeffs.get(q as usize - 1).map_or(0.0, |c| c.1)
    }

    /// Smallest `q >= 1` with `|c_q| >= 1e-12 max |c|`.
    pub fn hermite_rank(&self) -> Result<u32> {
        let max = self.coeffs.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
        if max == 0.0 {
            return Err(Error::ConstantObservable);
        }
        self.coeffs
            .iter()
            .find(|c| c.1.abs() >= RANK_ZERO_THRESHOLD * max)
            .map(|c| c.0)
            .ok_or(Error::ConstantObservable)
    }

    /// Truncated series `h0 + sum_q c_q H_q^g(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let g = self.variance_base;
        let (mut prev, mut cur) = (1.0, x);
        let mut acc = self.h0;
        for (k, &(_, c)) in self.coeffs.iter().enumerate() {
            acc += c * cur;
            let next = x * cur - (k + 1) as f64 * g * prev;
            prev = cur;
            cur = next;
        }
        acc
    }

    /// `q! c_q^2 g^q`, the variance carried by chaos `q`.
    pub fn chaos_variance(&self, q: u32) -> f64 {
        factorial(q) * self.coeff(q).powi(2) * self.variance_base.powi(q as i32)
    }

    /// `Var[H(X_o)] = sum_q q! c_q^2 g^q + tail_variance`.
    pub fn variance(&self) -> f64 {
        (1..=self.q_max()).map(|q| self.chaos_variance(q)).sum::<f64>() + self.tail_variance
    }

    /// `C_m` and the per-chaos summands, with the lattice sums cut at `|u|_inf <= radius`.
    pub fn limit_constant(&self, model: &CovarianceModel, radius: usize) -> Result<LimitConstant> {
        let m = self.hermite_rank()?;
        let gate = model.lq_sum(m, radius)?;
        if !gate.converged {
            return Err(Error::Divergent { q: m, radius, partial: gate.partial });
        }
        let mut per_q = Vec::new();
        let mut signed = 0.0;
        let mut absolute = 0.0;
        let mut tail = 0.0;
        for q in m..=self.q_max() {
            let c = self.coeff(q);
            if c == 0.0 {
                continue;
            }
            let s = if q == m { gate } else { model.lq_sum(q, radius)? };
            let w = factorial(q) * c * c;
            per_q.push(ChaosTerm { q, signed: w * s.signed_partial, absolute: w * s.partial });
            signed += w * s.signed_partial;
            absolute += w * s.partial;
            tail += w * s.tail_estimate;
        }
        Ok(LimitConstant { signed, absolute, per_q, truncated: tail > 0.0, tail_estimate: tail })
    }
}

/// Per-chaos limit-variance summand `q! c_q^2 sum_u rho(u)^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosTerm {
    pub q: u32,
    /// With `sum_u rho(u)^q`.
    pub signed: f64,
    /// With `sum_u |rho(u)|^q`.
    pub absolute: f64,
}

/// `C_m = sum_q q! c_q^2 sum_u rho(u)^q` in both the signed and absolute-value forms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitConstant {
    pub signed: f64,
    pub absolute: f64,
    pub per_q: Vec<ChaosTerm>,
    pub truncated: bool,
    /// Estimated contribution of lattice sites beyond the radius (absolute form).
    pub tail_estimate: f64,
}

/// Exact expansion of `sum_n a_n x^n` from
/// `x^n = sum_k n! / (k! (n-2k)! 2^k) g^k H_{n-2k}^g(x)`.
///
/// Orders above `q_max` go into `tail_variance`.
pub fn expand_polynomial(monomials: &[f64], variance_base: f64, q_max: u32) -> Result<HermiteExpansion> {
    if variance_base <= 0.0 || !variance_base.is_finite() {
        return Err(Error::NonPositiveVariance(variance_base));
    }
    if q_max == 0 {
        return Err(Error::ZeroQMax);
    }
    let degree = monomials.len().saturating_sub(1);
    let mut full = vec![0.0; degree.max(q_max as usize) + 1];
    for (n, &a) in monomials.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let mut coef = 1.0; // n! / (k! (n-2k)! 2^k) at k = 0
        let mut gk = 1.0;
        for k in 0..=n / 2 {
            full[n - 2 * k] += a * coef * gk;
            let m = (n - 2 * k) as f64;
            coef *= m * (m - 1.0) / (2.0 * (k + 1) as f64);
            gk *= variance_base;
        }
    }
    let coeffs: Vec<(u32, f64)> = (1..=q_max).map(|q| (q, full[q as usize])).collect();
    let tail_variance = (q_max as usize + 1..full.len())
        .map(|q| factorial(q as u32) * full[q].powi(2) * variance_base.powi(q as i32))
        .sum();
    Ok(HermiteExpansion { variance_base, h0: full[0], coeffs, tail_variance })
}

/// Gauss-Hermite projection `c_q = E[H(X) H_q^g(X)] / (q! g^q)` for `X ~ N(0, g)`,
/// doubling the node count until coefficients move by less than `1e-10` (scaled by
/// the standard deviation of `H(X)`).
pub fn expand(h: impl Fn(f64) -> f64, variance_base: f64, q_max: u32) -> Result<HermiteExpansion> {
    if variance_base <= 0.0 || !variance_base.is_finite() {
        return Err(Error::NonPositiveVariance(variance_base));
    }
    if q_max == 0 {
        return Err(Error::ZeroQMax);
    }
    let sigma = variance_base.sqrt();
    let project = |n: usize| -> (Vec<f64>, f64, f64) {
        // normalized coefficients a_q = E[H hhat_q(Z)], hhat_q = H_q / sqrt(q!)
        let (x, w) = gauss_hermite(n);
        let mut a = vec![0.0; q_max as usize + 1];
        let mut second = 0.0;
        for (&z, &wi) in x.iter().zip(&w) {
            if wi == 0.0 {
                continue;
            }
            let v = h(sigma * z);
            second += wi * v * v;
            let (mut prev, mut cur) = (0.0, 1.0);
            for (q, slot) in a.iter_mut().enumerate() {
                *slot += wi * v * cur;
                let qf = q as f64;
                let next = (z * cur - qf.sqrt() * prev) / (qf + 1.0).sqrt();
                prev = cur;
                cur = next;
            }
        }
        let mean = a[0];
        (a, mean, second)
    };
    let mut n = FIRST_NODES;
    let (mut a, _, _) = project(n);
    let (mean, second) = loop {
        let next_n = 2 * n;
        let (a2, mean2, second2) = project(next_n);
        let scale = (second2 - mean2 * mean2).max(0.0).sqrt().max(1.0);
        let change = a.iter().zip(&a2).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / scale;
        if !a2.iter().all(|v| v.is_finite()) || !second2.is_finite() {
            return Err(Error::QuadratureNonConvergence { nodes: next_n, change: f64::INFINITY });
        }
        a = a2;
        n = next_n;
        if change < QUADRATURE_TOL {
            break (mean2, second2);
        }
        if n >= MAX_NODES {
            return Err(Error::QuadratureNonConvergence { nodes: n, change });
        }
    };
    let mut coeffs = Vec::with_capacity(q_max as usize);
    let mut captured = 0.0;
    for q in 1..=q_max {
        let aq = a[q as usize];
        captured += aq * aq;
        let c = aq / (factorial(q).sqrt() * sigma.powi(q as i32));
        coeffs.push((q, c));
    }
    let var = second - mean * mean;
    let tail_variance = (var - captured).max(0.0);
    Ok(HermiteExpansion { variance_base, h0: mean, coeffs, tail_variance })
}

/// An observable `H`, either a polynomial in monomial form or a Hermite series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `x^p`.
    Power { p: u32 },
    /// `sum_n coeffs[n] x^n`.
    Polynomial { coeffs: Vec<f64> },
    /// `h0 + sum c_q H_q^g` against the field's own variance.
    Hermite { h0: f64, coeffs: Vec<(u32, f64)> },
}

impl Observable {
    pub fn monomials(&self) -> Option<Vec<f64>> {
        match self {
            Observable::Power { p } => {
                let mut m = vec![0.0; *p as usize + 1];
                m[*p as usize] = 1.0;
                Some(m)
            }
            Observable::Polynomial { coeffs } => Some(coeffs.clone()),
            Observable::Hermite { .. } => None,
        }
    }

    /// Expansion against `N(0, variance_base)`; exact for every variant.
    pub fn expand(&self, variance_base: f64, q_max: u32) -> Result<HermiteExpansion> {
        match self {
            Observable::Hermite { h0, coeffs } => {
                let mut e = HermiteExpansion::from_coefficients(variance_base, *h0, coeffs)?;
                if e.q_max() > q_max {
                    let tail: f64 = (q_max + 1..=e.q_max()).map(|q| e.chaos_variance(q)).sum();
                    e.coeffs.truncate(q_max as usize);
                    e.tail_variance = tail;
                } else {
                    e.coeffs.extend((e.q_max() + 1..=q_max).map(|q| (q, 0.0)));
                }
                Ok(e)
            }
            _ => expand_polynomial(&self.monomials().expect("polynomial"), variance_base, q_max),
        }
    }

    /// Degree for polynomial observables, largest order for Hermite series.
    pub fn degree(&self) -> u32 {
        match self {
            Observable::Power { p } => *p,
            Observable::Polynomial { coeffs } => coeffs.len().saturating_sub(1) as u32,
            Observable::Hermite { coeffs, .. } => coeffs.iter().map(|c| c.0).max().unwrap_or(0),
        }
    }

    /// Evaluator: monomial Horner form for polynomials, series form otherwise
    /// (the series form needs the variance the coefficients refer to).
    pub fn evaluator(&self, variance_base: f64) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        Ok(match self.monomials() {
            Some(m) => Box::new(move |x| m.iter().rev().fold(0.0, |acc, a| acc * x + a)),
            None => {
                let e = self.expand(variance_base, self.degree())?;
                Box::new(move |x| e.eval(x))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_examples() {
        assert_eq!(eval_hermite(0, 2.5), 1.0);
        assert_eq!(eval_hermite(2, 1.0), 0.0);
        assert_eq!(eval_hermite(3, 2.0), 2.0);
        assert_eq!(eval_hermite(4, 0.0), 3.0);
    }

    #[test]
    fn derivative_identity() {
        // d/dx H_q = q H_{q-1}
        let h = 1e-5;
        for i in 0..100 {
            let x = -3.0 + 6.0 * (i as f64 + 0.5) / 100.0;
            for q in 1..8usize {
                let fd = (eval_hermite(q, x + h) - eval_hermite(q, x - h)) / (2.0 * h);
                assert!((fd - q as f64 * eval_hermite(q - 1, x)).abs() < 1e-6, "q={q} x={x}");
            }
        }
    }

    #[test]
    fn orthogonality_under_quadrature() {
        let (x, w) = gauss_hermite(40);
        for p in 0..=12usize {
            for q in 0..=12usize {
                let s: f64 = x.iter().zip(&w).map(|(&z, &wi)| wi * eval_hermite(p, z) * eval_hermite(q, z)).sum();
                let expect = if p == q { factorial(q as u32) } else { 0.0 };
                let scale = (factorial(p as u32) * factorial(q as u32)).sqrt();
                assert!((s - expect).abs() < 1e-11 * scale, "p={p} q={q} s={s}");
            }
        }
    }

    #[test]
    fn cube_expansion() {
        let e = expand_polynomial(&[0.0, 0.0, 0.0, 1.0], 1.0, 6).unwrap();
        assert_eq!(e.h0, 0.0);
        assert_eq!(e.coeff(1), 3.0);
        assert_eq!(e.coeff(2), 0.0);
        assert_eq!(e.coeff(3), 1.0);
        assert_eq!(e.hermite_rank().unwrap(), 1);
        assert_eq!(e.tail_variance, 0.0);
    }

    #[test]
    fn square_expansion() {
        let e = Observable::Power { p: 2 }.expand(1.0, 4).unwrap();
        assert_eq!((e.h0, e.coeff(2), e.hermite_rank().unwrap()), (1.0, 1.0, 2));
    }

    #[test]
    fn fifth_power_first_coefficient() {
        for g in [0.5, 1.0, 1.5, 0.2527] {
            let e = Observable::Power { p: 5 }.expand(g, 5).unwrap();
            assert!((e.coeff(1) - 15.0 * g * g).abs() < 1e-12);
        }
    }

    #[test]
    fn ranks_of_powers() {
        for p in 1..6u32 {
            let even = Observable::Power { p: 2 * p }.expand(1.3, 2 * p).unwrap();
            assert_eq!(even.hermite_rank().unwrap(), 2);
            let odd = Observable::Power { p: 2 * p + 1 }.expand(1.3, 2 * p + 1).unwrap();
            assert_eq!(odd.hermite_rank().unwrap(), 1);
        }
        let h5 = expand(|x| eval_hermite(5, x), 1.0, 8).unwrap();
        assert_eq!(h5.hermite_rank().unwrap(), 5);
        let constant = expand_polynomial(&[2.0], 1.0, 3).unwrap();
        assert_eq!(constant.hermite_rank(), Err(Error::ConstantObservable));
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let poly = [0.3, -1.0, 0.5, 2.0, 0.0, -0.25, 0.1];
        for g in [1.0, 0.4, 2.2] {
            let exact = expand_polynomial(&poly, g, 8).unwrap();
            let quad = expand(|x| poly.iter().rev().fold(0.0, |a, c| a * x + c), g, 8).unwrap();
            assert!((exact.h0 - quad.h0).abs() < 1e-9);
            for q in 1..=8 {
                assert!((exact.coeff(q) - quad.coeff(q)).abs() < 1e-9, "g={g} q={q}");
            }
            assert!(quad.tail_variance < 1e-8);
        }
    }

    #[test]
    fn parseval_for_polynomials() {
        let poly = [1.0, 0.5, -0.3, 0.2, 0.0, 0.01, -0.02, 0.0, 0.003, 0.0, 0.0005];
        let e = expand_polynomial(&poly, 1.0, 10).unwrap();
        let (x, w) = gauss_hermite(64);
        let h = |z: f64| poly.iter().rev().fold(0.0, |a, c| a * z + c);
        let mean: f64 = x.iter().zip(&w).map(|(&z, &wi)| wi * h(z)).sum();
        let second: f64 = x.iter().zip(&w).map(|(&z, &wi)| wi * h(z) * h(z)).sum();
        assert!((second - mean * mean - e.variance()).abs() < 1e-10);
    }

    #[test]
    fn smooth_non_polynomial() {
        let e = expand(f64::cos, 1.0, 30).unwrap();
        // E[cos Z] = e^{-1/2}; c_2 = -e^{-1/2}/2
        assert!((e.h0 - (-0.5f64).exp()).abs() < 1e-12);
        assert!((e.coeff(2) + 0.5 * (-0.5f64).exp()).abs() < 1e-12);
        assert!(e.coeff(1).abs() < 1e-14);
        assert!(e.tail_variance < 1e-12);
    }

    #[test]
    fn rough_function_fails_to_converge() {
        let err = expand(|x| if x > 0.0 { 1.0 } else { -1.0 }, 1.0, 4).unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { .. }));
        assert!(matches!(expand(|x| x, 0.0, 4), Err(Error::NonPositiveVariance(_))));
    }

    #[test]
    fn truncation_reports_tail() {
        let e = Observable::Power { p: 4 }.expand(1.0, 2).unwrap();
        // x^4 = H4 + 6 H2 + 3: tail is 4! * 1
        assert_eq!(e.tail_variance, 24.0);
        assert_eq!(e.variance(), 2.0 * 36.0 + 24.0);
    }

    #[test]
    fn limit_constant_examples() {
        let delta = CovarianceModel::delta(2);
        let h2 = HermiteExpansion::from_coefficients(1.0, 0.0, &[(2, 1.0)]).unwrap();
        assert_eq!(h2.limit_constant(&delta, 2).unwrap().signed, 2.0);
        let cube = Observable::Power { p: 3 }.expand(1.0, 3).unwrap();
        let c = cube.limit_constant(&delta, 2).unwrap();
        assert_eq!(c.signed, 15.0);
        // equals E[(X^3)^2] = 15 for X ~ N(0,1)
        assert_eq!(c.signed, cube.variance());
    }

    #[test]
    fn limit_constant_nearest_neighbour_oracle() {
        for a in [0.1, -0.3, 0.45] {
            let m = CovarianceModel::finite_support(1, &[(vec![0], 1.0), (vec![1], a)]).unwrap();
            let lin = HermiteExpansion::from_coefficients(1.0, 0.0, &[(1, 1.0)]).unwrap();
            let c = lin.limit_constant(&m, 3).unwrap();
            // direct lattice sum over u in {-1, 0, 1}
            let oracle: f64 = [-1i64, 0, 1].iter().map(|&u| m.rho(&[u])).sum();
            assert!((c.signed - oracle).abs() < 1e-15);
            assert!((c.signed - (1.0 + 2.0 * a)).abs() < 1e-15);
            assert!((c.absolute - (1.0 + 2.0 * a.abs())).abs() < 1e-15);
        }
    }

    #[test]
    fn limit_constant_rejects_divergence() {
        let p = CovarianceModel::power_law(3, 1.0, 1.0, 1.0).unwrap();
        let lin = Observable::Power { p: 3 }.expand(1.0, 3).unwrap();
        assert!(matches!(lin.limit_constant(&p, 8), Err(Error::Divergent { q: 1, .. })));
    }

    #[test]
    fn json_shape() {
        let e = Observable::Power { p: 2 }.expand(1.0, 2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["coeffs"], serde_json::json!([[1, 0.0], [2, 1.0]]));
        assert_eq!(v["h0"], 1.0);
    }
}
