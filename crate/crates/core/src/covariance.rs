//! Stationary covariance models on Z^d and their summability diagnostics.

use std::collections::HashMap;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::green;
use crate::quadrature::advance;

/// Relative spectral floor separating roundoff from a genuine embedding failure.
pub const EMBEDDING_TOL: f64 = 1e-9;

/// Relative change under radius doubling accepted as convergence.
pub const LQ_REL_TOL: f64 = 1e-8;

/// Shell-decay exponent above which a slowly converging lattice sum counts as summable.
pub const SUMMABLE_DECAY: f64 = 1.5;

/// Serialized form of a model, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Rows `[u_1, .., u_d, rho]`; missing mirror entries `-u` are filled in.
    FiniteSupport { table: Vec<Vec<f64>> },
    /// `rho(u) = amplitude (1 + |u|_2)^{-exponent}` off the origin, `rho(0) = variance`.
    PowerLaw { amplitude: f64, exponent: f64, variance: f64 },
    /// Lattice Green function, `d >= 3`.
    GffGreen,
    /// Forward difference of the lattice free field along `axis`:
    /// `rho(u) = 2 G(u) - G(u + e_axis) - G(u - e_axis)`.
    GffGradient { axis: usize },
    Delta {
        #[serde(default = "one")]
        variance: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dimension: usize,
    #[serde(flatten)]
    pub kind: CovarianceKind,
}

/// A validated stationary covariance `rho(u) = E[X_o X_u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct CovarianceModel {
    spec: ModelSpec,
    support: HashMap<Vec<i64>, f64>,
    radius: Option<usize>,
    variance: f64,
}

impl From<CovarianceModel> for ModelSpec {
    fn from(m: CovarianceModel) -> Self {
        m.spec
    }
}

impl TryFrom<ModelSpec> for CovarianceModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        CovarianceModel::new(spec.dimension, spec.kind)
    }
}

impl CovarianceModel {
    pub fn new(dimension: usize, kind: CovarianceKind) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Invalid("dimension must be at least 1".into()));
        }
        let mut support = HashMap::new();
        let mut radius = None;
        let variance = match &kind {
            CovarianceKind::Delta { variance } => {
                if *variance <= 0.0 {
                    return Err(Error::NonPositiveVariance(*variance));
                }
                support.insert(vec![0; dimension], *variance);
                radius = Some(0);
                *variance
            }
            CovarianceKind::FiniteSupport { table } => {
                for row in table {
                    if row.len() != dimension + 1 {
                        return Err(Error::Invalid(format!(
                            "finite-support row {row:?} needs {} lattice coordinates and a value",
                            dimension
                        )));
                    }
                    let u: Vec<i64> = row[..dimension]
                        .iter()
                        .map(|&c| {
                            if c.fract() != 0.0 {
                                Err(Error::Invalid(format!("non-integer lattice coordinate {c}")))
                            } else {
                                Ok(c as i64)
                            }
                        })
                        .collect::<Result<_>>()?;
                    let value = row[dimension];
                    let mirror: Vec<i64> = u.iter().map(|c| -c).collect();
                    for key in [u, mirror] {
                        match support.get(&key) {
                            Some(&old) if old != value => {
                                return Err(Error::Invalid(format!(
                                    "asymmetric table: rho({key:?}) given as {old} and {value}"
                                )))
                            }
                            _ => {
                                support.insert(key, value);
                            }
                        }
                    }
                }
                let v = support.get(&vec![0; dimension]).copied().unwrap_or(0.0);
                if v <= 0.0 {
                    return Err(Error::NonPositiveVariance(v));
                }
                support.retain(|_, r| *r != 0.0);
                if let Some((u, r)) = support.iter().find(|(_, r)| r.abs() > v) {
                    return Err(Error::Invalid(format!("|rho({u:?})| = {} exceeds rho(0) = {v}", r.abs())));
                }
                radius = Some(
                    support.keys().map(|u| u.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0)).max().unwrap_or(0),
                );
                v
            }
            CovarianceKind::PowerLaw { amplitude, exponent, variance } => {
                if *variance <= 0.0 {
                    return Err(Error::NonPositiveVariance(*variance));
                }
                if *exponent <= 0.0 {
                    return Err(Error::Invalid(format!("power-law exponent must be positive, got {exponent}")));
                }
                if amplitude.abs() * 2f64.powf(-exponent) > *variance {
                    return Err(Error::Invalid("power-law amplitude exceeds rho(0) at unit lag".into()));
                }
                *variance
            }
            CovarianceKind::GffGreen => {
                if dimension < 3 {
                    return Err(Error::Dimension { got: dimension, need: ">= 3" });
                }
                green::discrete_green(dimension, &vec![0; dimension], green::DEFAULT_TOL)?
            }
            CovarianceKind::GffGradient { axis } => {
                if dimension < 3 {
                    return Err(Error::Dimension { got: dimension, need: ">= 3" });
                }
                if *axis >= dimension {
                    return Err(Error::Invalid(format!("gradient axis {axis} out of range for d={dimension}")));
                }
                let mut e = vec![0; dimension];
                e[*axis] = 1;
                let g0 = green::discrete_green(dimension, &vec![0; dimension], green::DEFAULT_TOL)?;
                2.0 * (g0 - green::discrete_green(dimension, &e, green::DEFAULT_TOL)?)
            }
        };
        Ok(Self { spec: ModelSpec { dimension, kind }, support, radius, variance })
    }

    pub fn delta(dimension: usize) -> Self {
        Self::new(dimension, CovarianceKind::Delta { variance: 1.0 }).expect("valid")
    }

    /// Finite-support model from `(u, rho(u))` pairs; mirrors are filled in.
    pub fn finite_support(dimension: usize, entries: &[(Vec<i64>, f64)]) -> Result<Self> {
        let table = entries
            .iter()
            .map(|(u, r)| u.iter().map(|&c| c as f64).chain(std::iter::once(*r)).collect())
            .collect();
        Self::new(dimension, CovarianceKind::FiniteSupport { table })
    }

    /// Covariance of a normalized moving average of iid noise over a cube of side `width`:
    /// `rho(u) = prod_i (width - |u_i|) / width`.
    pub fn moving_average(dimension: usize, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Invalid("moving-average width must be positive".into()));
        }
        let r = width as i64 - 1;
        let side = 2 * r as usize + 1;
        let mut entries = Vec::new();
        let mut idx = vec![0usize; dimension];
        loop {
            let u: Vec<i64> = idx.iter().map(|&i| i as i64 - r).collect();
            let v: f64 = u.iter().map(|c| (width as i64 - c.abs()) as f64 / width as f64).product();
            entries.push((u, v));
            if !advance(&mut idx, side) {
                break;
            }
        }
        Self::finite_support(dimension, &entries)
    }

    pub fn power_law(dimension: usize, amplitude: f64, exponent: f64, variance: f64) -> Result<Self> {
        Self::new(dimension, CovarianceKind::PowerLaw { amplitude, exponent, variance })
    }

    pub fn gff(dimension: usize) -> Result<Self> {
        Self::new(dimension, CovarianceKind::GffGreen)
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.spec.kind
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// `rho(0)`.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Largest `|u|_inf` with `rho(u) != 0`, or `None` for infinite range.
    pub fn support_radius(&self) -> Option<usize> {
        self.radius
    }

    /// Nonzero entries for finite-range models.
    pub fn sparse_entries(&self) -> Option<impl Iterator<Item = (&Vec<i64>, &f64)>> {
        self.radius.map(|_| self.support.iter())
    }

    /// Short identifier used in sample provenance.
    pub fn id(&self) -> String {
        let kind = match &self.spec.kind {
            CovarianceKind::FiniteSupport { .. } => "finite_support".to_string(),
            CovarianceKind::PowerLaw { amplitude, exponent, variance } => {
                format!("power_law(a={amplitude},beta={exponent},v={variance})")
            }
            CovarianceKind::GffGreen => "gff_green".to_string(),
            CovarianceKind::GffGradient { axis } => format!("gff_gradient(axis={axis})"),
            CovarianceKind::Delta { variance } => format!("delta(v={variance})"),
        };
        format!("{kind}/d{}", self.spec.dimension)
    }

    /// `rho(u)`.
    pub fn rho(&self, u: &[i64]) -> f64 {
        debug_assert_eq!(u.len(), self.dimension());
        match &self.spec.kind {
            CovarianceKind::Delta { .. } | CovarianceKind::FiniteSupport { .. } => {
                self.support.get(u).copied().unwrap_or(0.0)
            }
            CovarianceKind::PowerLaw { amplitude, exponent, variance } => {
                if u.iter().all(|&c| c == 0) {
                    *variance
                } else {
                    let r = u.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
                    amplitude * (1.0 + r).powf(-exponent)
                }
            }
            CovarianceKind::GffGreen => green::discrete_green(self.dimension(), u, green::DEFAULT_TOL)
                .expect("dimension validated at construction"),
            CovarianceKind::GffGradient { axis } => {
                let g = |v: &[i64]| green::discrete_green(self.dimension(), v, green::DEFAULT_TOL).expect("validated");
                let mut up = u.to_vec();
                up[*axis] += 1;
                let mut down = u.to_vec();
                down[*axis] -= 1;
                2.0 * g(u) - g(&up) - g(&down)
            }
        }
    }

    /// Canonical representative of `u` under the sign flips and coordinate permutations
    /// that leave `rho` invariant; `None` when only `u -> -u` is known.
    fn symmetry_key(&self, u: &[i64]) -> Option<Vec<i64>> {
        let mut key: Vec<i64> = u.iter().map(|c| c.abs()).collect();
        match self.spec.kind {
            CovarianceKind::PowerLaw { .. } | CovarianceKind::GffGreen | CovarianceKind::Delta { .. } => {
                key.sort_unstable();
                Some(key)
            }
            CovarianceKind::GffGradient { axis } => {
                let lead = key.remove(axis);
                key.sort_unstable();
                key.insert(0, lead);
                Some(key)
            }
            CovarianceKind::FiniteSupport { .. } => None,
        }
    }

    /// Per-shell sums of `|rho|^q` and `rho^q` over `|u|_inf = k`, `k = 0..=radius`.
    fn shell_sums(&self, q: u32, radius: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.dimension();
        let mut abs = vec![0.0; radius + 1];
        let mut signed = vec![0.0; radius + 1];
        if let Some(entries) = self.sparse_entries() {
            for (u, r) in entries {
                let k = u.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
                if k <= radius {
                    let p = r.powi(q as i32);
                    abs[k] += p.abs();
                    signed[k] += p;
                }
            }
            return (abs, signed);
        }
        // Nonnegative orthant with multiplicity 2^{#nonzero}; equal-canonical points share a value.
        let mut idx = vec![0usize; d];
        let mut memo: HashMap<Vec<i64>, f64> = HashMap::new();
        loop {
            let u: Vec<i64> = idx.iter().map(|&i| i as i64).collect();
            let key = self.symmetry_key(&u).expect("dense models are sign-flip symmetric");
            let r = *memo.entry(key).or_insert_with(|| self.rho(&u));
            let mult = (1u64 << u.iter().filter(|&&c| c != 0).count()) as f64;
            let k = idx.iter().copied().max().unwrap_or(0);
            let p = r.powi(q as i32);
            abs[k] += mult * p.abs();
            signed[k] += mult * p;
            if !advance(&mut idx, radius + 1) {
                break;
            }
        }
        (abs, signed)
    }

    /// `sum_{|u|_inf <= radius} |rho(u)|^q` with a convergence diagnostic.
    ///
    /// `converged` holds when doubling the radius changes the absolute sum by less than
    /// [`LQ_REL_TOL`] relative, or when the shell sums over `[radius, 2 radius]` decay
    /// faster than `k^{-SUMMABLE_DECAY}`; in that case the tail estimate is the
    /// extrapolated remainder beyond `radius`.
    pub fn lq_sum(&self, q: u32, radius: usize) -> Result<LqSum> {
        if radius == 0 || q == 0 {
            return Err(Error::Invalid("lq_sum needs q >= 1 and radius >= 1".into()));
        }
        let (abs, signed) = self.shell_sums(q, 2 * radius);
        let partial: f64 = abs[..=radius].iter().sum();
        let signed_partial: f64 = signed[..=radius].iter().sum();
        let doubled: f64 = abs.iter().sum();
        let rel_change = (doubled - partial) / partial;
        // least-squares slope of log S_k against log k over the outer shells
        let pts: Vec<(f64, f64)> = (radius.max(1)..=2 * radius)
            .filter(|&k| abs[k] > 0.0)
            .map(|k| ((k as f64).ln(), abs[k].ln()))
            .collect();
        let decay = if pts.len() >= 2 {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            Some(-sxy / sxx)
        } else {
            None
        };
        let converged = rel_change < LQ_REL_TOL || decay.is_some_and(|g| g > SUMMABLE_DECAY);
        let tail_estimate = if rel_change < LQ_REL_TOL {
            doubled - partial
        } else {
            match decay {
                Some(g) if g > 1.0 => {
                    let k = (2 * radius) as f64;
                    (doubled - partial) + abs[2 * radius] * k / (g - 1.0)
                }
                _ => f64::INFINITY,
            }
        };
        Ok(LqSum { partial, signed_partial, converged, tail_estimate, decay_exponent: decay })
    }

    /// DFT of the `M`-periodized covariance on the torus `(Z/MZ)^d`.
    ///
    /// Fails when the most negative eigenvalue is below `-1e-9 * max`; smaller negative
    /// values are roundoff and are clamped to zero.
    pub fn spectral_density(&self, m: usize) -> Result<Vec<f64>> {
        if m == 0 || m % 2 == 1 {
            return Err(Error::Invalid(format!("torus size must be even and positive, got {m}")));
        }
        if matches!(self.spec.kind, CovarianceKind::GffGreen | CovarianceKind::GffGradient { .. }) {
            return Err(Error::Invalid(
                "the lattice GFF is sampled on a zero-boundary box, not by circulant embedding".into(),
            ));
        }
        let d = self.dimension();
        let shape = vec![m; d];
        let n: usize = shape.iter().product();
        let wrap = |i: usize| -> i64 {
            let i = i as i64;
            if 2 * i > m as i64 {
                i - m as i64
            } else {
                i
            }
        };
        let mut c = vec![Complex64::default(); n];
        let mut idx = vec![0usize; d];
        let mut flat = 0;
        loop {
            let u: Vec<i64> = idx.iter().map(|&i| wrap(i)).collect();
            let neg: Vec<i64> = idx.iter().map(|&i| wrap((m - i) % m)).collect();
            c[flat] = Complex64::new(0.5 * (self.rho(&u) + self.rho(&neg)), 0.0);
            flat += 1;
            if !advance(&mut idx, m) {
                break;
            }
        }
        FftNd::new(&shape, false).process(&mut c);
        let spec: Vec<f64> = c.iter().map(|z| z.re).collect();
        let max = spec.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = spec.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -EMBEDDING_TOL * max {
            return Err(Error::EmbeddingFailure { min, max });
        }
        Ok(spec.into_iter().map(|v| v.max(0.0)).collect())
    }
}

/// Result of [`CovarianceModel::lq_sum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LqSum {
    pub partial: f64,
    pub signed_partial: f64,
    pub converged: bool,
    /// Estimated `|rho|^q` mass outside the radius; infinite when not summable.
    pub tail_estimate: f64,
    pub decay_exponent: Option<f64>,
}
