//! Dirichlet Laplacian eigenbasis on `D = [-1/2, 1/2]^d` and `H^{-alpha}(D)` norms.
//!
//! `phi_k(x) = prod_i sqrt(2) sin(k_i pi (x_i + 1/2))`, `lambda_k = pi^2 |k|^2`, `k_i >= 1`.
//! Modes are enumerated with the product cutoff `k_i <= k_max`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice;
use crate::quadrature::advance;

/// One-dimensional factor `sqrt(2) sin(k pi (x + 1/2))`.
pub fn phi_1d(k: usize, x: f64) -> f64 {
    std::f64::consts::SQRT_2 * (k as f64 * PI * (x + 0.5)).sin()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenMode {
    pub k: Vec<usize>,
    pub eigenvalue: f64,
}

impl EigenMode {
    pub fn new(k: &[usize]) -> Result<Self> {
        if k.is_empty() || k.contains(&0) {
            return Err(Error::Invalid(format!("eigenmode indices must be >= 1, got {k:?}")));
        }
        let eigenvalue = PI * PI * k.iter().map(|&v| (v * v) as f64).sum::<f64>();
        Ok(Self { k: k.to_vec(), eigenvalue })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.k.iter().zip(x).map(|(&k, &xi)| phi_1d(k, xi)).product()
    }
}

/// `<Phi_N, phi_k> = N^{-d/2} sum_{j in B_N} (H(X_j) - h0) phi_k(j/N)`, by direct summation.
pub fn project(
    window: &[f64],
    h: &dyn Fn(f64) -> f64,
    h0: f64,
    d: usize,
    n: usize,
    mode: &EigenMode,
) -> Result<f64> {
    let expected = lattice::window_len(d, n);
    if window.len() != expected || mode.k.len() != d {
        return Err(Error::SizeMismatch { expected, got: window.len() });
    }
    let s: f64 = lattice::window_points(d, n)
        .iter()
        .zip(window)
        .map(|(x, &v)| (h(v) - h0) * mode.eval(x))
        .sum();
    Ok(s * (n as f64).powf(-(d as f64) / 2.0))
}

/// Separable projector onto all modes `k in [1, k_max]^d` for windows `B_N`.
#[derive(Debug, Clone)]
pub struct SobolevProjector {
    d: usize,
    n: usize,
    k_max: usize,
    /// `table[(k-1) * side + j] = phi_k(j / N)`.
    table: Vec<f64>,
}

impl SobolevProjector {
    pub fn new(d: usize, n: usize, k_max: usize) -> Self {
        let side = lattice::side(n);
        let h = lattice::half_width(n) as f64;
        let mut table = Vec::with_capacity(k_max * side);
        for k in 1..=k_max {
            for j in 0..side {
                table.push(phi_1d(k, (j as f64 - h) / n as f64));
            }
        }
        Self { d, n, k_max, table }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Coefficients for already-centered summands `H(X_j) - h0`, row-major over `k`.
    pub fn coefficients(&self, centered: &[f64]) -> Result<Vec<f64>> {
        let side = lattice::side(self.n);
        let expected = lattice::window_len(self.d, self.n);
        if centered.len() != expected {
            return Err(Error::SizeMismatch { expected, got: centered.len() });
        }
        let mut dims = vec![side; self.d];
        let mut cur = centered.to_vec();
        for axis in 0..self.d {
            let outer: usize = dims[..axis].iter().product();
            let inner: usize = dims[axis + 1..].iter().product();
            let mut next = vec![0.0; outer * self.k_max * inner];
            for o in 0..outer {
                for k in 0..self.k_max {
                    let row = &self.table[k * side..(k + 1) * side];
                    let dst = &mut next[(o * self.k_max + k) * inner..(o * self.k_max + k + 1) * inner];
                    for (j, &t) in row.iter().enumerate() {
                        let src = &cur[(o * side + j) * inner..(o * side + j + 1) * inner];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a += t * b;
                        }
                    }
                }
            }
            dims[axis] = self.k_max;
            cur = next;
        }
        let scale = (self.n as f64).powf(-(self.d as f64) / 2.0);
        cur.iter_mut().for_each(|v| *v *= scale);
        Ok(cur)
    }

    /// Coefficients plus the data needed for the truncation bound.
    pub fn sobolev(&self, centered: &[f64], alpha: f64) -> Result<SobolevCoefficients> {
        let coeffs = self.coefficients(centered)?;
        let sup_abs = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(SobolevCoefficients { alpha, d: self.d, n: self.n, k_max: self.k_max, sup_abs, coeffs })
    }
}

/// `<Phi_N, phi_k>` for `k in [1, k_max]^d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolevCoefficients {
    pub alpha: f64,
    pub d: usize,
    pub n: usize,
    pub k_max: usize,
    /// `max_j |H(X_j) - h0|` over the window.
    pub sup_abs: f64,
    pub coeffs: Vec<f64>,
}

impl SobolevCoefficients {
    /// Mode multi-indices in storage order.
    pub fn modes(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![0usize; self.d];
        let mut out = Vec::with_capacity(self.coeffs.len());
        loop {
            out.push(idx.iter().map(|i| i + 1).collect());
            if !advance(&mut idx, self.k_max) {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevNorm {
    pub value: f64,
    /// Bound on the modes outside the cutoff; infinite for `alpha <= d/2`.
    pub tail_bound: f64,
    /// `alpha <= d/2`, outside the range where the norm is controlled.
    pub below_critical: bool,
}

/// Integral-test bound on `sum_{k in N^d, max k_i > k_max} (1 + pi^2 |k|^2)^{-alpha}`.
///
/// Each such `k` owns the unit cell `[k-1, k]`, whose points have `|x| >= |k| - sqrt(d)`,
/// so the sum is at most the orthant integral of `(pi |x|)^{-2 alpha}` beyond `k_max - sqrt d`.
pub fn eigen_tail_bound(d: usize, alpha: f64, k_max: usize) -> f64 {
    let df = d as f64;
    if alpha <= df / 2.0 {
        return f64::INFINITY;
    }
    let r0 = k_max as f64 - df.sqrt();
    if r0 <= 0.0 {
        return f64::INFINITY;
    }
    let sphere = 2.0 * PI.powf(df / 2.0) / libm::tgamma(df / 2.0);
    sphere / 2f64.powi(d as i32) * PI.powf(-2.0 * alpha) * r0.powf(df - 2.0 * alpha) / (2.0 * alpha - df)
}

/// `sum_k (1 + lambda_k)^{-alpha} |<Phi_N, phi_k>|^2` over the stored modes, with a bound
/// on the remainder from `|<Phi_N, phi_k>| <= N^{-d/2} |B_N| sup|H - h0| 2^{d/2}`.
pub fn sobolev_norm_sq(c: &SobolevCoefficients) -> SobolevNorm {
    let value = c
        .modes()
        .iter()
        .zip(&c.coeffs)
        .map(|(k, a)| {
            let lambda = PI * PI * k.iter().map(|&v| (v * v) as f64).sum::<f64>();
            (1.0 + lambda).powf(-c.alpha) * a * a
        })
        .sum();
    let bound_coef = (c.n as f64).powf(-(c.d as f64) / 2.0)
        * lattice::window_len(c.d, c.n) as f64
        * c.sup_abs
        * 2f64.powf(c.d as f64 / 2.0);
    let tail = eigen_tail_bound(c.d, c.alpha, c.k_max);
    let tail_bound = if c.sup_abs == 0.0 { 0.0 } else { bound_coef * bound_coef * tail };
    SobolevNorm { value, tail_bound, below_critical: c.alpha <= c.d as f64 / 2.0 }
}

/// CSV row of a Sobolev spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub k: String,
    pub lambda: f64,
    pub coefficient: f64,
    pub weighted: f64,
}

pub fn spectrum_rows(c: &SobolevCoefficients) -> Vec<SpectrumRow> {
    c.modes()
        .iter()
        .zip(&c.coeffs)
        .map(|(k, &a)| {
            let lambda = PI * PI * k.iter().map(|&v| (v * v) as f64).sum::<f64>();
            SpectrumRow {
                k: k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x"),
                lambda,
                coefficient: a,
                weighted: (1.0 + lambda).powf(-c.alpha) * a * a,
            }
        })
        .collect()
}

/// Truncated kernel `sum_{k <= k_max} (1 + lambda_k)^{-alpha} phi_k(x) phi_k(y)`.
pub fn kernel(alpha: f64, x: &[f64], y: &[f64], k_max: usize) -> f64 {
    let d = x.len();
    let fx: Vec<Vec<f64>> = x.iter().map(|&xi| (1..=k_max).map(|k| phi_1d(k, xi)).collect()).collect();
    let fy: Vec<Vec<f64>> = y.iter().map(|&yi| (1..=k_max).map(|k| phi_1d(k, yi)).collect()).collect();
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let mut lambda = 0.0;
        let mut prod = 1.0;
        for (a, &i) in idx.iter().enumerate() {
            lambda += ((i + 1) * (i + 1)) as f64;
            prod *= fx[a][i] * fy[a][i];
        }
        total += (1.0 + PI * PI * lambda).powf(-alpha) * prod;
        if !advance(&mut idx, k_max) {
            break;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelBound {
    pub value: f64,
    /// `None` when the tail sum diverges (`alpha <= d/2`).
    pub tail_bound: Option<f64>,
}

/// Maximum of the truncated kernel over the grid `{-1/2 + i/grid}^d`, `i = 0..=grid`.
///
/// The kernel is positive semi-definite, so `|K(x,y)| <= sqrt(K(x,x) K(y,y))` and the
/// maximum over grid pairs is attained on the diagonal.
pub fn kernel_bound(d: usize, alpha: f64, grid: usize, k_max: usize) -> KernelBound {
    let pts: Vec<f64> = (0..=grid).map(|i| -0.5 + i as f64 / grid as f64).collect();
    let sq: Vec<Vec<f64>> = pts.iter().map(|&x| (1..=k_max).map(|k| phi_1d(k, x).powi(2)).collect()).collect();
    let mut weights = Vec::with_capacity(k_max.pow(d as u32));
    let mut modes = vec![0usize; d];
    loop {
        let lambda: f64 = modes.iter().map(|&i| ((i + 1) * (i + 1)) as f64).sum();
        weights.push((1.0 + PI * PI * lambda).powf(-alpha));
        if !advance(&mut modes, k_max) {
            break;
        }
    }
    let mut gidx = vec![0usize; d];
    let mut best = 0.0f64;
    loop {
        let mut midx = vec![0usize; d];
        let mut total = 0.0;
        let mut flat = 0;
        loop {
            let mut prod = weights[flat];
            for (a, &i) in midx.iter().enumerate() {
                prod *= sq[gidx[a]][i];
            }
            total += prod;
            flat += 1;
            if !advance(&mut midx, k_max) {
                break;
            }
        }
        best = best.max(total);
        if !advance(&mut gidx, grid + 1) {
            break;
        }
    }
    let tail = eigen_tail_bound(d, alpha, k_max);
    KernelBound {
        value: best,
        tail_bound: tail.is_finite().then(|| 2f64.powi(d as i32) * tail),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_cube;

    #[test]
    fn eigenmode_examples() {
        let m = EigenMode::new(&[1, 1]).unwrap();
        assert!((m.eigenvalue - 2.0 * PI * PI).abs() < 1e-12);
        assert!(EigenMode::new(&[1]).unwrap().eval(&[-0.5]).abs() < 1e-15);
        assert!(EigenMode::new(&[2]).unwrap().eval(&[0.0]).abs() < 1e-15);
        assert!(EigenMode::new(&[0, 1]).is_err());
    }

    #[test]
    fn gram_matrix_is_identity() {
        let modes: Vec<EigenMode> = (1..=5)
            .flat_map(|a| (1..=4).map(move |b| EigenMode::new(&[a, b]).unwrap()))
            .collect();
        assert_eq!(modes.len(), 20);
        for (i, a) in modes.iter().enumerate() {
            for (j, b) in modes.iter().enumerate() {
                let g = integrate_cube(2, 64, |x| a.eval(x) * b.eval(x));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigen_equation_by_finite_differences() {
        let m = EigenMode::new(&[2, 3]).unwrap();
        let h = 1e-4;
        for x in [[0.1, -0.2], [0.33, 0.41], [-0.45, 0.05]] {
            let mut lap = -4.0 * m.eval(&x);
            for a in 0..2 {
                for s in [-h, h] {
                    let mut y = x;
                    y[a] += s;
                    lap += m.eval(&y);
                }
            }
            lap /= h * h;
            assert!((-lap - m.eigenvalue * m.eval(&x)).abs() < 1e-3 * m.eigenvalue);
        }
        assert!(m.eval(&[0.5, 0.2]).abs() < 1e-14);
    }

    #[test]
    fn separable_projection_matches_direct_sum() {
        let d = 2;
        let n = 7;
        let len = lattice::window_len(d, n);
        let window: Vec<f64> = (0..len).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let h = |x: f64| x * x;
        let centered: Vec<f64> = window.iter().map(|&x| h(x) - 1.0).collect();
        let proj = SobolevProjector::new(d, n, 4);
        let fast = proj.coefficients(&centered).unwrap();
        for (i, k) in (SobolevCoefficients { alpha: 1.0, d, n, k_max: 4, sup_abs: 0.0, coeffs: fast.clone() })
            .modes()
            .iter()
            .enumerate()
        {
            let slow = project(&window, &h, 1.0, d, n, &EigenMode::new(k).unwrap()).unwrap();
            assert!((slow - fast[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_riemann_sum() {
        // H = identity, window = phi_k(j/N): N^{-d/2} sum phi^2 ~ N^{d/2}
        let d = 1;
        let n = 201;
        let m = EigenMode::new(&[3]).unwrap();
        let window: Vec<f64> = lattice::window_points(d, n).iter().map(|x| m.eval(x)).collect();
        let p = project(&window, &|x| x, 0.0, d, n, &m).unwrap();
        assert!((p / (n as f64).sqrt() - 1.0).abs() < 1e-2);
        let zero = project(&vec![0.0; n], &|x| x, 0.0, d, n, &m).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn norm_examples() {
        let mut c = SobolevCoefficients { alpha: 1.5, d: 1, n: 9, k_max: 3, sup_abs: 1.0, coeffs: vec![0.0, 2.0, 0.0] };
        let lambda = 4.0 * PI * PI;
        let v = sobolev_norm_sq(&c);
        assert!((v.value - (1.0 + lambda).powf(-1.5) * 4.0).abs() < 1e-15);
        c.coeffs = vec![0.3, -1.2, 0.7];
        let a1 = sobolev_norm_sq(&c).value;
        c.alpha = 2.5;
        assert!(sobolev_norm_sq(&c).value <= a1);
        c.alpha = 0.5;
        let low = sobolev_norm_sq(&c);
        assert!(low.below_critical && low.tail_bound.is_infinite());
    }

    #[test]
    fn kernel_is_symmetric_and_stable() {
        let x = [0.13, -0.27];
        let y = [-0.31, 0.08];
        assert!((kernel(1.5, &x, &y, 20) - kernel(1.5, &y, &x, 20)).abs() < 1e-12);
        let a = kernel_bound(1, 1.0, 64, 100).value;
        let b = kernel_bound(1, 1.0, 64, 200).value;
        assert!((a - b).abs() / b < 0.01, "{a} {b}");
        assert!(kernel_bound(2, 1.0, 8, 10).tail_bound.is_none());
    }

    #[test]
    fn tail_bound_dominates_true_tail() {
        // d = 1: exact tail sum_{k > K} (1 + pi^2 k^2)^{-alpha}
        let alpha = 1.0;
        let k_max = 10;
        let exact: f64 = (k_max + 1..200_000).map(|k| (1.0 + PI * PI * (k * k) as f64).powf(-alpha)).sum();
        assert!(eigen_tail_bound(1, alpha, k_max) >= exact);
    }
}
