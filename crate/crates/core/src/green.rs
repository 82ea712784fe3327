//! Green functions of the lattice Laplacian on Z^d (d >= 3) and of the
//! continuum Laplacian on R^d.
//!
//! The lattice Green function is the Fourier integral
//! `G(u) = (2 pi)^-d int cos(theta . u) / sum_j 2 (1 - cos theta_j) dtheta`.
//! One angle is integrated in closed form, which leaves a `(d-1)`-dimensional
//! integrand with an integrable `1/|theta|` point singularity at the origin.
//! Splitting the cube into pyramids (one per coordinate that attains the max)
//! and using `theta = s (.., 1, t, ..)` cancels the singularity with the
//! Jacobian, so tensor Gauss-Legendre converges geometrically.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{advance, gauss_legendre};
use crate::rng::aux_rng;

/// Default absolute tolerance of the Fourier quadrature.
pub const DEFAULT_TOL: f64 = 1e-11;

const MAX_NODES: usize = 192;

/// Canonical cache key: dimension plus sorted absolute coordinates.
fn canonical(u: &[i64]) -> Vec<i64> {
    let mut k: Vec<i64> = u.iter().map(|v| v.abs()).collect();
    k.sort_unstable_by(|a, b| b.cmp(a));
    k
}

type Cache = RwLock<HashMap<(usize, Vec<i64>), f64>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Fourier quadrature at `n` nodes per axis. `u` is canonical.
fn fourier_quadrature(u: &[i64], n: usize) -> f64 {
    let d = u.len();
    let m = d - 1;
    let lead = u[0] as i32;
    let rest = &u[1..];
    let (sx, sw) = gauss_legendre(n, 0.0, PI);
    let (tx, tw) = gauss_legendre(n, 0.0, 1.0);
    let mut total = 0.0;
    let mut theta = vec![0.0; m];
    for pyramid in 0..m {
        for (&s, &ws) in sx.iter().zip(&sw) {
            let jac = ws * s.powi(m as i32 - 1);
            let mut idx = vec![0usize; m - 1];
            loop {
                let mut w = jac;
                let mut slot = 0;
                for (a, th) in theta.iter_mut().enumerate() {
                    if a == pyramid {
                        *th = s;
                    } else {
                        *th = s * tx[idx[slot]];
                        w *= tw[idx[slot]];
                        slot += 1;
                    }
                }
                // b = sum 2(1 - cos theta) written with sin^2 for small angles
                let mut b = 0.0;
                let mut osc = 1.0;
                for (th, &uj) in theta.iter().zip(rest) {
                    let h = (0.5 * th).sin();
                    b += 4.0 * h * h;
                    if uj != 0 {
                        osc *= (th * uj as f64).cos();
                    }
                }
                let root = (b * (b + 4.0)).sqrt();
                let z = (2.0 + b - root) / 2.0;
                total += w * osc * z.powi(lead) / root;
                if m == 1 || !advance(&mut idx, n) {
                    break;
                }
            }
        }
    }
    total / PI.powi(m as i32)
}

/// Quadrature with node refinement; returns `(value, error_estimate)`.
fn fourier_value(u: &[i64], tol: f64) -> (f64, f64) {
    let span = u.iter().map(|v| v.abs()).max().unwrap_or(0) as usize;
    let mut n = 16usize.max(2 * span + 8);
    let mut prev = fourier_quadrature(u, n);
    loop {
        let next_n = (n * 3) / 2;
        let next = fourier_quadrature(u, next_n);
        let err = (next - prev).abs();
        if err <= tol || next_n >= MAX_NODES {
            return (next, err);
        }
        n = next_n;
        prev = next;
    }
}

/// Lattice Green function `G(o, u)` on Z^d, `d >= 3`, solving `(-Delta) G = delta_o`.
///
/// Values are computed by Fourier quadrature and memoised per `(d, |u| sorted)`.
pub fn discrete_green(d: usize, u: &[i64], tol: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::Dimension { got: d, need: ">= 3" });
    }
    if u.len() != d {
        return Err(Error::SizeMismatch { expected: d, got: u.len() });
    }
    let key = (d, canonical(u));
    if let Some(v) = cache().read().expect("green cache poisoned").get(&key) {
        return Ok(*v);
    }
    let (value, _) = fourier_value(&key.1, tol);
    cache().write().expect("green cache poisoned").entry(key).or_insert(value);
    Ok(value)
}

/// Normalization `c_d = Gamma(d/2 - 1) / (4 pi^{d/2})` of the whole-space Green function.
pub fn continuum_constant(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    libm::tgamma(h - 1.0) / (4.0 * PI.powf(h))
}

/// `G_cont(x, y) = c_d |x - y|^{2-d}`.
pub fn continuous_green(d: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    if d < 3 {
        return Err(Error::Dimension { got: d, need: ">= 3" });
    }
    if x.len() != d || y.len() != d {
        return Err(Error::SizeMismatch { expected: d, got: x.len().min(y.len()) });
    }
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if r2 == 0.0 {
        return Err(Error::Singular);
    }
    Ok(continuum_constant(d) * r2.sqrt().powf(2.0 - d as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    FourierIntegral,
    RandomWalkMc,
}

/// Cached ball of lattice Green function values around the origin.
#[derive(Debug, Clone)]
pub struct GreenFunction {
    pub dimension: usize,
    pub radius: usize,
    pub method: GreenMethod,
    pub diagonal: f64,
    values: HashMap<Vec<i64>, f64>,
}

/// One site of a quadrature-versus-walk comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenComparison {
    pub u: Vec<i64>,
    pub quadrature: f64,
    pub walk: f64,
    pub walk_se: f64,
}

fn ball(d: usize, radius: usize) -> Vec<Vec<i64>> {
    let side = 2 * radius + 1;
    let mut idx = vec![0usize; d];
    let mut out = Vec::new();
    loop {
        out.push(idx.iter().map(|&i| i as i64 - radius as i64).collect());
        if !advance(&mut idx, side) {
            break;
        }
    }
    out
}

impl GreenFunction {
    /// Quadrature values on the ball `|u|_inf <= radius + 1`.
    pub fn fourier(d: usize, radius: usize, tol: f64) -> Result<Self> {
        let mut values = HashMap::new();
        for u in ball(d, radius + 1) {
            let v = discrete_green(d, &u, tol)?;
            values.insert(u, v);
        }
        let diagonal = values[&vec![0i64; d]];
        Ok(Self { dimension: d, radius, method: GreenMethod::FourierIntegral, diagonal, values })
    }

    /// Occupation-time estimates from `walks` simple random walks of `steps` steps.
    ///
    /// `G(o,u) = E[visits to u] / (2d)`; visits after the cutoff are added from the
    /// local limit theorem, `(d / 2 pi)^{d/2} T^{1-d/2} / (d/2 - 1)`.
    pub fn random_walk(
        d: usize,
        radius: usize,
        walks: usize,
        steps: usize,
        seed: u64,
    ) -> Result<(Self, HashMap<Vec<i64>, f64>)> {
        if d < 3 {
            return Err(Error::Dimension { got: d, need: ">= 3" });
        }
        let r = radius as i64 + 1;
        let side = (2 * r + 1) as usize;
        let cells = side.pow(d as u32);
        let chunk = 256usize;
        let chunks = walks.div_ceil(chunk);
        let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = aux_rng(seed, c as u64);
                let mut sum = vec![0.0; cells];
                let mut sumsq = vec![0.0; cells];
                let mut counts = vec![0u32; cells];
                let mut touched: Vec<usize> = Vec::new();
                let lo = c * chunk;
                let hi = ((c + 1) * chunk).min(walks);
                let mut pos = vec![0i64; d];
                for _ in lo..hi {
                    pos.iter_mut().for_each(|p| *p = 0);
                    for step in 0..=steps {
                        if step > 0 {
                            let dir = rng.random_range(0..2 * d);
                            pos[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
                        }
                        if pos.iter().all(|p| p.abs() <= r) {
                            let mut cell = 0usize;
                            for p in &pos {
                                cell = cell * side + (p + r) as usize;
                            }
                            if counts[cell] == 0 {
                                touched.push(cell);
                            }
                            counts[cell] += 1;
                        }
                    }
                    for &cell in &touched {
                        let v = counts[cell] as f64;
                        sum[cell] += v;
                        sumsq[cell] += v * v;
                        counts[cell] = 0;
                    }
                    touched.clear();
                }
                (sum, sumsq)
            })
            .collect();
        let mut sum = vec![0.0; cells];
        let mut sumsq = vec![0.0; cells];
        for (s, q) in partial {
            for i in 0..cells {
                sum[i] += s[i];
                sumsq[i] += q[i];
            }
        }
        let df = d as f64;
        let tail = (df / (2.0 * PI)).powf(df / 2.0) * (steps as f64).powf(1.0 - df / 2.0)
            / (df / 2.0 - 1.0);
        let w = walks as f64;
        let mut values = HashMap::new();
        let mut ses = HashMap::new();
        for u in ball(d, radius + 1) {
            let mut cell = 0usize;
            for p in &u {
                cell = cell * side + (p + r) as usize;
            }
            let mean = sum[cell] / w;
            let var = (sumsq[cell] / w - mean * mean).max(0.0) * w / (w - 1.0);
            values.insert(u.clone(), (mean + tail) / (2.0 * df));
            ses.insert(u, (var / w).sqrt() / (2.0 * df));
        }
        let diagonal = values[&vec![0i64; d]];
        Ok((Self { dimension: d, radius, method: GreenMethod::RandomWalkMc, diagonal, values }, ses))
    }

    pub fn get(&self, u: &[i64]) -> Option<f64> {
        self.values.get(u).copied()
    }

    /// `(-Delta G)(u) = 2d G(u) - sum_{v ~ u} G(v)`, for `|u|_inf <= radius`.
    pub fn minus_laplacian(&self, u: &[i64]) -> Option<f64> {
        let d = self.dimension;
        let mut acc = 2.0 * d as f64 * self.get(u)?;
        let mut v = u.to_vec();
        for a in 0..d {
            for step in [-1i64, 1] {
                v[a] += step;
                acc -= self.get(&v)?;
                v[a] -= step;
            }
        }
        Some(acc)
    }
}

/// Compare quadrature against random-walk occupation times on `|u|_inf <= radius`.
///
/// Fails with [`Error::GreenMismatch`] when any site differs by more than three
/// combined standard errors.
pub fn cross_check(
    d: usize,
    radius: usize,
    walks: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<GreenComparison>> {
    let quad = GreenFunction::fourier(d, radius, DEFAULT_TOL)?;
    let (walk, ses) = GreenFunction::random_walk(d, radius, walks, steps, seed)?;
    let mut out = Vec::new();
    for u in ball(d, radius) {
        let q = quad.get(&u).expect("ball covered");
        let w = walk.get(&u).expect("ball covered");
        let se = ses[&u];
        if (q - w).abs() > 3.0 * se {
            return Err(Error::GreenMismatch { u, quadrature: q, walk: w, se });
        }
        out.push(GreenComparison { u, quadrature: q, walk: w, walk_se: se });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Watson's integral for the simple cubic lattice: expected returns 1.516386059151978,
    // divided by 2d = 6 for the unnormalized Laplacian.
    const G3_ORIGIN: f64 = 0.252_731_009_858_663;

    #[test]
    fn origin_value_d3() {
        let g = discrete_green(3, &[0, 0, 0], 1e-12).unwrap();
        assert!((g - G3_ORIGIN).abs() < 1e-10, "{g}");
    }

    #[test]
    fn symmetric_under_reflection() {
        let a = discrete_green(3, &[1, 0, 0], 1e-12).unwrap();
        let b = discrete_green(3, &[-1, 0, 0], 1e-12).unwrap();
        let c = fourier_value(&[1, 0, 0], 1e-12).0;
        assert_eq!(a, b);
        assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn harmonic_away_from_origin() {
        let g = GreenFunction::fourier(3, 2, 1e-12).unwrap();
        assert!((g.minus_laplacian(&[0, 0, 0]).unwrap() - 1.0).abs() < 1e-6);
        for u in [[1, 0, 0], [1, 1, 0], [2, 1, -1], [0, -2, 2]] {
            assert!(g.minus_laplacian(&u).unwrap().abs() < 1e-6, "{u:?}");
        }
    }

    #[test]
    fn four_dimensional_laplacian() {
        let g = GreenFunction::fourier(4, 0, 1e-10).unwrap();
        assert!((g.minus_laplacian(&[0, 0, 0, 0]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn positive_and_decaying() {
        let mut prev = f64::INFINITY;
        for r in 0..6 {
            let g = discrete_green(3, &[r, 0, 0], DEFAULT_TOL).unwrap();
            assert!(g > 0.0 && g < prev);
            prev = g;
        }
        // far field approaches 1/(4 pi r)
        let g = discrete_green(3, &[8, 0, 0], DEFAULT_TOL).unwrap();
        assert!((g * 4.0 * PI * 8.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn continuum_normalization() {
        let c3 = continuous_green(3, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert!((c3 - 1.0 / (4.0 * PI)).abs() < 1e-15);
        let x = [0.1, 0.2, -0.3];
        let y = [0.4, -0.1, 0.0];
        let yl: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + 2.5 * (b - a)).collect();
        let base = continuous_green(3, &x, &y).unwrap();
        let scaled = continuous_green(3, &x, &yl).unwrap();
        assert!((scaled - 2.5f64.powi(-1) * base).abs() < 1e-14);
        let c4 = continuum_constant(4);
        let v = continuous_green(4, &[0.0; 4], &[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v - c4 / 4.0).abs() < 1e-15);
        assert_eq!(continuous_green(3, &x, &x), Err(Error::Singular));
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(matches!(discrete_green(2, &[0, 0], 1e-8), Err(Error::Dimension { .. })));
    }
}
