//! Gaussian field realizations on finite volumes.
//!
//! Stationary models are sampled on the torus `(Z/MZ)^d` by circulant embedding. The
//! lattice free field is sampled on the box `{0..M}^d` with zero boundary values, by
//! sine-series synthesis. Both store `M^d` values in row-major order; for the box,
//! index 0 along any axis is the boundary and the site `M` is implicit.

use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::fft::{strides, FftNd, SineTransform};
use crate::lattice;
use crate::quadrature::advance;
use crate::rng::replica_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Torus,
    ZeroBoundaryBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub model_id: String,
    pub seed: u64,
    pub replica_index: u64,
    pub kind: SampleKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub dimension: usize,
    pub size: usize,
    pub values: Vec<f64>,
    pub meta: SampleMeta,
}

impl FieldSample {
    pub fn get(&self, idx: &[usize]) -> f64 {
        let st = strides(&vec![self.size; self.dimension]);
        self.values[idx.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]
    }
}

/// Torus size used when a config does not fix one: `max(2N, 2 radius + 2)`, made even.
pub fn default_torus_size(model: &CovarianceModel, n_max: usize) -> usize {
    let m = (2 * n_max).max(2 * model.support_radius().unwrap_or(0) + 2);
    m + m % 2
}

/// Circulant-embedding sampler with the spectrum precomputed for one `(model, M)`.
pub struct StationarySampler {
    d: usize,
    m: usize,
    model_id: String,
    /// `sqrt(lambda_k / M^d)`.
    amplitude: Vec<f64>,
    fft: FftNd,
}

impl StationarySampler {
    pub fn new(model: &CovarianceModel, m: usize) -> Result<Self> {
        let lambda = model.spectral_density(m)?;
        let n = lambda.len() as f64;
        let d = model.dimension();
        Ok(Self {
            d,
            m,
            model_id: model.id(),
            amplitude: lambda.iter().map(|l| (l / n).sqrt()).collect(),
            fft: FftNd::new(&vec![m; d], false),
        })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    /// `X = Re FFT(sqrt(lambda / M^d) (Z_1 + i Z_2))`.
    pub fn sample(&self, seed: u64, replica_index: u64) -> FieldSample {
        let mut rng = replica_rng(seed, replica_index);
        let mut w: Vec<Complex64> = self
            .amplitude
            .iter()
            .map(|&a| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(a * re, a * im)
            })
            .collect();
        self.fft.process(&mut w);
        FieldSample {
            dimension: self.d,
            size: self.m,
            values: w.into_iter().map(|z| z.re).collect(),
            meta: SampleMeta {
                model_id: self.model_id.clone(),
                seed,
                replica_index,
                kind: SampleKind::Torus,
            },
        }
    }
}

pub fn sample_stationary(model: &CovarianceModel, m: usize, seed: u64, replica_index: u64) -> Result<FieldSample> {
    Ok(StationarySampler::new(model, m)?.sample(seed, replica_index))
}

/// Eigenvalue `sum_i 4 sin^2(pi k_i / 2M)` of the Dirichlet Laplacian on `{1..M-1}^d`.
fn box_eigenvalue(k: &[usize], m: usize) -> f64 {
    k.iter()
        .map(|&ki| (std::f64::consts::PI * ki as f64 / (2.0 * m as f64)).sin().powi(2) * 4.0)
        .sum()
}

/// Zero-boundary lattice free field on `{0..M}^d` via the discrete sine basis.
pub struct GffSampler {
    d: usize,
    m: usize,
    /// `1 / sqrt(lambda_k)` over `k in {1..M-1}^d`, row-major.
    inv_sqrt: Vec<f64>,
    /// `lambda_k`, same layout.
    lambda: Vec<f64>,
    dst: SineTransform,
}

impl GffSampler {
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::Dimension { got: d, need: ">= 3" });
        }
        if m < 8 {
            return Err(Error::Invalid(format!("GFF box size must be >= 8, got {m}")));
        }
        let l = m - 1;
        let mut lambda = Vec::with_capacity(l.pow(d as u32));
        let mut idx = vec![0usize; d];
        loop {
            let k: Vec<usize> = idx.iter().map(|i| i + 1).collect();
            lambda.push(box_eigenvalue(&k, m));
            if !advance(&mut idx, l) {
                break;
            }
        }
        Ok(Self {
            d,
            m,
            inv_sqrt: lambda.iter().map(|v| 1.0 / v.sqrt()).collect(),
            lambda,
            dst: SineTransform::new(&vec![l; d]),
        })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    /// `X = (2/M)^{d/2} DST-I(Z_k / sqrt(lambda_k))`, embedded with zero boundary.
    pub fn sample(&self, seed: u64, replica_index: u64) -> FieldSample {
        let mut rng = replica_rng(seed, replica_index);
        let mut coef: Vec<f64> = self
            .inv_sqrt
            .iter()
            .map(|&s| s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.dst.process(&mut coef);
        let scale = (2.0 / self.m as f64).powf(self.d as f64 / 2.0);
        let values = self.embed(&coef, scale);
        FieldSample {
            dimension: self.d,
            size: self.m,
            values,
            meta: SampleMeta {
                model_id: format!("gff_green/d{}", self.d),
                seed,
                replica_index,
                kind: SampleKind::ZeroBoundaryBox,
            },
        }
    }

    /// Copy an interior `(M-1)^d` array into the `M^d` layout with zero boundary.
    fn embed(&self, interior: &[f64], scale: f64) -> Vec<f64> {
        let l = self.m - 1;
        let mut out = vec![0.0; self.m.pow(self.d as u32)];
        let st = strides(&vec![self.m; self.d]);
        let mut idx = vec![0usize; self.d];
        for &v in interior {
            let off: usize = idx.iter().zip(&st).map(|(i, s)| (i + 1) * s).sum();
            out[off] = scale * v;
            advance(&mut idx, l);
        }
        out
    }

    /// `sum_{x,y} a_x G_box(x,y) b_y` for arrays in the `M^d` layout.
    ///
    /// Boundary entries are ignored. Computed as `sum_k A_k B_k / lambda_k` with
    /// `A_k = sum_x a_x psi_k(x)`.
    pub fn green_form(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let total = self.m.pow(self.d as u32);
        for v in [a, b] {
            if v.len() != total {
                return Err(Error::SizeMismatch { expected: total, got: v.len() });
            }
        }
        let scale = (2.0 / self.m as f64).powf(self.d as f64 / 2.0);
        let fa = self.interior_transform(a);
        let fb = self.interior_transform(b);
        Ok(fa
            .iter()
            .zip(&fb)
            .zip(&self.lambda)
            .map(|((x, y), l)| scale * x * scale * y / l)
            .sum())
    }

    fn interior_transform(&self, a: &[f64]) -> Vec<f64> {
        let l = self.m - 1;
        let st = strides(&vec![self.m; self.d]);
        let mut idx = vec![0usize; self.d];
        let mut out = Vec::with_capacity(l.pow(self.d as u32));
        loop {
            out.push(a[idx.iter().zip(&st).map(|(i, s)| (i + 1) * s).sum::<usize>()]);
            if !advance(&mut idx, l) {
                break;
            }
        }
        self.dst.process(&mut out);
        out
    }
}

pub fn sample_gff(d: usize, m: usize, seed: u64, replica_index: u64) -> Result<FieldSample> {
    Ok(GffSampler::new(d, m)?.sample(seed, replica_index))
}

/// Box Green function `G_box(x, y) = sum_k psi_k(x) psi_k(y) / lambda_k` by direct summation.
///
/// Coordinates are box coordinates in `0..=M`; boundary points give 0.
pub fn box_green(d: usize, m: usize, x: &[usize], y: &[usize]) -> f64 {
    let l = m - 1;
    let pi = std::f64::consts::PI;
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let k: Vec<usize> = idx.iter().map(|i| i + 1).collect();
        let mut prod = 1.0;
        for a in 0..d {
            let kf = k[a] as f64 * pi / m as f64;
            prod *= (2.0 / m as f64) * (kf * x[a] as f64).sin() * (kf * y[a] as f64).sin();
        }
        total += prod / box_eigenvalue(&k, m);
        if !advance(&mut idx, l) {
            break;
        }
    }
    total
}

/// Forward difference `X_{j + e_axis} - X_j`: periodic on the torus, with the zero
/// boundary value beyond the last box row.
pub fn gradient_field(sample: &FieldSample, axis: usize) -> Result<FieldSample> {
    let d = sample.dimension;
    if axis >= d {
        return Err(Error::Invalid(format!("axis {axis} out of range for d={d}")));
    }
    let m = sample.size;
    let st = strides(&vec![m; d]);
    let mut out = vec![0.0; sample.values.len()];
    let mut idx = vec![0usize; d];
    let mut flat = 0;
    loop {
        let here = sample.values[flat];
        let next = if idx[axis] + 1 < m {
            sample.values[flat + st[axis]]
        } else {
            match sample.meta.kind {
                SampleKind::Torus => sample.values[flat - (m - 1) * st[axis]],
                SampleKind::ZeroBoundaryBox => 0.0,
            }
        };
        out[flat] = if sample.meta.kind == SampleKind::ZeroBoundaryBox && idx.iter().enumerate().any(|(a, &i)| a != axis && i == 0) {
            0.0
        } else {
            next - here
        };
        flat += 1;
        if !advance(&mut idx, m) {
            break;
        }
    }
    Ok(FieldSample { dimension: d, size: m, values: out, meta: sample.meta.clone() })
}

/// `B_N` centered at `center` (sample coordinates) with a required boundary margin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub n: usize,
    pub center: Vec<usize>,
    pub buffer: usize,
}

impl Window {
    /// Window at the sample center with the margin policy of its kind:
    /// `floor(N/2)` on the torus, `M/4` in the box.
    pub fn centered(sample_dim: usize, m: usize, kind: SampleKind, n: usize) -> Self {
        Self { n, center: vec![m / 2; sample_dim], buffer: required_margin(kind, m, n) }
    }
}

fn required_margin(kind: SampleKind, m: usize, n: usize) -> usize {
    match kind {
        SampleKind::Torus => lattice::half_width(n),
        SampleKind::ZeroBoundaryBox => m / 4,
    }
}

/// Copy of the sample over `B_N`, row-major, `(2 floor(N/2) + 1)^d` values.
pub fn extract_window(sample: &FieldSample, window: &Window) -> Result<Vec<f64>> {
    let d = sample.dimension;
    let m = sample.size;
    if window.center.len() != d {
        return Err(Error::SizeMismatch { expected: d, got: window.center.len() });
    }
    let h = lattice::half_width(window.n);
    let required = window.buffer.max(required_margin(sample.meta.kind, m, window.n));
    let margin = window
        .center
        .iter()
        .map(|&c| (c as isize - h as isize).min(m as isize - c as isize - h as isize))
        .min()
        .unwrap_or(0);
    if margin < required as isize {
        return Err(Error::OutOfBounds { n: window.n, margin, required });
    }
    let st = strides(&vec![m; d]);
    let side = lattice::side(window.n);
    let base: usize = window.center.iter().zip(&st).map(|(c, s)| (c - h) * s).sum();
    let mut idx = vec![0usize; d];
    let mut out = Vec::with_capacity(lattice::window_len(d, window.n));
    loop {
        out.push(sample.values[base + idx.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]);
        if !advance(&mut idx, side) {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DumpHeader {
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    kind: SampleKind,
    seed: u64,
    replica_index: u64,
}

/// One JSON header line `{d, M, kind, seed, replica_index}`, then little-endian f64 values.
pub fn write_raw(sample: &FieldSample, mut out: impl Write) -> io::Result<()> {
    let header = DumpHeader {
        d: sample.dimension,
        m: sample.size,
        kind: sample.meta.kind,
        seed: sample.meta.seed,
        replica_index: sample.meta.replica_index,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in &sample.values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_raw`]; the model id is not stored and comes back empty.
pub fn read_raw(mut input: impl BufRead) -> io::Result<FieldSample> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: DumpHeader = serde_json::from_str(line.trim_end())?;
    let count = header.m.pow(header.d as u32);
    let mut bytes = vec![0u8; 8 * count];
    input.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FieldSample {
        dimension: header.d,
        size: header.m,
        values,
        meta: SampleMeta {
            model_id: String::new(),
            seed: header.seed,
            replica_index: header.replica_index,
            kind: header.kind,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_se(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn delta_field_has_unit_variance() {
        let s = sample_stationary(&CovarianceModel::delta(2), 1000, 7, 0).unwrap();
        let v = s.values.iter().map(|x| x * x).sum::<f64>() / s.values.len() as f64;
        assert!((v - 1.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn nearest_neighbour_lag_covariance() {
        let model = CovarianceModel::finite_support(2, &[(vec![0, 0], 1.0), (vec![1, 0], 0.3)]).unwrap();
        let sampler = StationarySampler::new(&model, 64).unwrap();
        let per: Vec<f64> = (0..200)
            .map(|r| {
                let s = sampler.sample(11, r);
                let mut acc = 0.0;
                for i in 0..64 {
                    for j in 0..64 {
                        acc += s.get(&[i, j]) * s.get(&[(i + 1) % 64, j]);
                    }
                }
                acc / 4096.0
            })
            .collect();
        let (m, se) = mean_se(&per);
        assert!((m - 0.3).abs() < 3.0 * se, "{m} {se}");
    }

    #[test]
    fn deterministic_and_replica_distinct() {
        let model = CovarianceModel::moving_average(2, 2).unwrap();
        let a = sample_stationary(&model, 16, 5, 3).unwrap();
        let b = sample_stationary(&model, 16, 5, 3).unwrap();
        let c = sample_stationary(&model, 16, 5, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        let g1 = sample_gff(3, 8, 1, 0).unwrap();
        assert_eq!(g1, sample_gff(3, 8, 1, 0).unwrap());
    }

    #[test]
    fn circulant_covariance_is_periodized_rho() {
        // d=1, M=16: full covariance over 5e4 replicas against rho(i-j mod M), 4 SE.
        let model = CovarianceModel::finite_support(1, &[(vec![0], 1.0), (vec![1], 0.4), (vec![2], -0.1)]).unwrap();
        let m = 16;
        let sampler = StationarySampler::new(&model, m).unwrap();
        let r = 50_000;
        let samples: Vec<Vec<f64>> = (0..r).map(|i| sampler.sample(3, i).values).collect();
        for i in 0..m {
            for j in 0..m {
                let prods: Vec<f64> = samples.iter().map(|s| s[i] * s[j]).collect();
                let (mean, se) = mean_se(&prods);
                let lag = (i as i64 - j as i64).rem_euclid(m as i64);
                let lag = if lag > m as i64 / 2 { lag - m as i64 } else { lag };
                let expect = model.rho(&[lag]);
                assert!((mean - expect).abs() < 4.0 * se, "{i},{j}: {mean} vs {expect}");
            }
        }
    }

    #[test]
    fn embedding_failure_propagates() {
        // |rho(1)| close to rho(0) on a short period makes the spectrum negative
        let model = CovarianceModel::finite_support(1, &[(vec![0], 1.0), (vec![1], 0.7)]).unwrap();
        assert!(matches!(sample_stationary(&model, 4, 0, 0), Err(Error::EmbeddingFailure { .. })));
    }

    #[test]
    fn box_green_matches_discrete_laplacian() {
        let (d, m) = (3, 8);
        let x = [3usize, 4, 2];
        let mut lap = 6.0 * box_green(d, m, &x, &x);
        for a in 0..d {
            for s in [-1i64, 1] {
                let mut y = x;
                y[a] = (y[a] as i64 + s) as usize;
                lap -= box_green(d, m, &y, &x);
            }
        }
        assert!((lap - 1.0).abs() < 1e-12);
        assert!(box_green(d, m, &[0, 4, 4], &x).abs() < 1e-14);
    }

    #[test]
    fn gff_center_variance_matches_eigen_sum() {
        let (d, m) = (3, 16);
        let sampler = GffSampler::new(d, m).unwrap();
        let c = [m / 2; 3];
        let vals: Vec<f64> = (0..500).map(|r| sampler.sample(9, r).get(&c).powi(2)).collect();
        let (mean, se) = mean_se(&vals);
        let exact = box_green(d, m, &c, &c);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} {exact} {se}");
        let centers: Vec<f64> = (0..500).map(|r| sampler.sample(9, r).get(&c)).collect();
        let (mu, se) = mean_se(&centers);
        assert!(mu.abs() < 3.0 * se);
    }

    #[test]
    fn box_green_approaches_infinite_volume() {
        let g = crate::green::discrete_green(3, &[0, 0, 0], 1e-11).unwrap();
        let g32 = box_green(3, 32, &[16; 3], &[16; 3]);
        let g64 = GffSampler::new(3, 64).unwrap();
        let mut e = vec![0.0; 64usize.pow(3)];
        e[32 * 64 * 64 + 32 * 64 + 32] = 1.0;
        let g64 = g64.green_form(&e, &e).unwrap();
        assert!(g32 < g64 && g64 < g);
        assert!(g - g64 < g - g32);
        assert!((g64 - box_green(3, 64, &[32; 3], &[32; 3])).abs() < 1e-12);
    }

    #[test]
    fn gradient_properties() {
        let model = CovarianceModel::delta(2);
        let mut s = sample_stationary(&model, 8, 1, 0).unwrap();
        s.values.iter_mut().for_each(|v| *v = 2.5);
        assert!(gradient_field(&s, 0).unwrap().values.iter().all(|&v| v == 0.0));
        let a = sample_stationary(&model, 8, 1, 1).unwrap();
        let b = sample_stationary(&model, 8, 1, 2).unwrap();
        let mut sum = a.clone();
        for (x, y) in sum.values.iter_mut().zip(&b.values) {
            *x = 2.0 * *x - 3.0 * y;
        }
        let (ga, gb, gs) = (gradient_field(&a, 1).unwrap(), gradient_field(&b, 1).unwrap(), gradient_field(&sum, 1).unwrap());
        for i in 0..gs.values.len() {
            assert!((gs.values[i] - (2.0 * ga.values[i] - 3.0 * gb.values[i])).abs() < 1e-12);
        }
        assert!(gradient_field(&a, 2).is_err());
    }

    #[test]
    fn gff_gradient_variance() {
        let (d, m) = (3, 64);
        let sampler = GffSampler::new(d, m).unwrap();
        let x = [32usize; 3];
        let y = [33usize, 32, 32];
        let exact = box_green(d, m, &x, &x) + box_green(d, m, &y, &y) - 2.0 * box_green(d, m, &x, &y);
        let vals: Vec<f64> = (0..400)
            .map(|r| gradient_field(&sampler.sample(2, r), 0).unwrap().get(&x).powi(2))
            .collect();
        let (mean, se) = mean_se(&vals);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} {exact}");
    }

    #[test]
    fn window_sizes_and_margins() {
        let s = sample_stationary(&CovarianceModel::delta(1), 10, 0, 0).unwrap();
        let w = Window::centered(1, 10, SampleKind::Torus, 5);
        assert_eq!(extract_window(&s, &w).unwrap().len(), 5);
        assert_eq!(extract_window(&s, &w).unwrap()[2], s.values[5]);
        let s2 = sample_stationary(&CovarianceModel::delta(2), 8, 0, 0).unwrap();
        assert_eq!(extract_window(&s2, &Window::centered(2, 8, SampleKind::Torus, 4)).unwrap().len(), 25);
        let edge = Window { n: 5, center: vec![2], buffer: 0 };
        assert!(matches!(extract_window(&s, &edge), Err(Error::OutOfBounds { .. })));
        let g = sample_gff(3, 16, 0, 0).unwrap();
        assert!(extract_window(&g, &Window::centered(3, 16, SampleKind::ZeroBoundaryBox, 8)).is_ok());
        assert!(extract_window(&g, &Window::centered(3, 16, SampleKind::ZeroBoundaryBox, 10)).is_err());
    }

    #[test]
    fn raw_dump_round_trip() {
        let s = sample_stationary(&CovarianceModel::delta(2), 4, 8, 2).unwrap();
        let mut buf = Vec::new();
        write_raw(&s, &mut buf).unwrap();
        let first = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..first]).unwrap();
        assert_eq!(header["M"], 4);
        assert_eq!(header["kind"], "torus");
        assert_eq!(buf.len() - first - 1, 16 * 8);
        let back = read_raw(&buf[..]).unwrap();
        assert_eq!(back.values, s.values);
    }
}
