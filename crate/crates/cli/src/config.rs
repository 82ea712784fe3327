//! Experiment configuration: JSON with a versioned schema.

use bmlab_core::chaos::TestFunction;
use bmlab_core::covariance::{CovarianceKind, CovarianceModel};
use bmlab_core::hermite::Observable;
use bmlab_core::sampler::default_torus_size;
use bmlab_core::stats::FieldSource;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

fn default_test_functions() -> Vec<TestFunction> {
    vec![TestFunction::ConstantOne]
}
fn default_q_max() -> u32 {
    8
}
fn default_se_multiplier() -> f64 {
    3.0
}
fn default_lq_radius() -> usize {
    64
}
fn default_true() -> bool {
    true
}
fn default_dump() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSpec {
    pub q: u32,
    /// Contraction orders; all of `1..q` when empty.
    #[serde(default)]
    pub r: Vec<u32>,
    /// Coefficient `c_q` in front of the kernel.
    #[serde(default = "one")]
    pub c_q: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GffSpec {
    /// `H(x) = x^power`.
    pub power: u32,
    #[serde(default = "default_ratio_range")]
    pub ratio_range: (f64, f64),
}

fn default_ratio_range() -> (f64, f64) {
    (0.85, 1.15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessSpec {
    pub k_max: usize,
    #[serde(default = "default_kernel_grid")]
    pub kernel_grid: usize,
}

fn default_kernel_grid() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dimension: usize,
    pub model: CovarianceKind,
    pub observable: Observable,
    /// Variance of the Gaussian reference measure; the field variance when absent.
    #[serde(default)]
    pub variance_base: Option<f64>,
    #[serde(default = "default_test_functions")]
    pub test_functions: Vec<TestFunction>,
    pub n_list: Vec<usize>,
    /// Torus period, or box size for the free field; derived from `n_list` when absent.
    #[serde(default)]
    pub lattice_size: Option<usize>,
    pub replicas: u64,
    pub seed: u64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_q_max")]
    pub q_max: u32,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Sample the forward difference of the free field along this axis.
    #[serde(default)]
    pub gradient_axis: Option<usize>,
    /// Chaos orders whose components `S_{N,q}` are recorded.
    #[serde(default)]
    pub components: Vec<u32>,
    #[serde(default = "default_se_multiplier")]
    pub se_multiplier: f64,
    /// Radius of the lattice sums behind `C_m`.
    #[serde(default = "default_lq_radius")]
    pub lq_radius: usize,
    #[serde(default)]
    pub contraction: Option<ContractionSpec>,
    #[serde(default)]
    pub gff: Option<GffSpec>,
    #[serde(default)]
    pub tightness: Option<TightnessSpec>,
    #[serde(default = "default_true")]
    pub write_statistics: bool,
    #[serde(default = "default_dump")]
    pub dump_replicas: Vec<u64>,
}

/// Which subcommand a config is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Clt,
    Contraction,
    Gff,
    Tightness,
    SampleDump,
}

/// A config after cross-field validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    /// Covariance of the sampled field (of its gradient, when requested).
    pub model: CovarianceModel,
    pub source: FieldSource,
    pub lattice_size: usize,
    pub variance_base: f64,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config does not parse: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn max_n(&self) -> usize {
        self.n_list.iter().copied().max().unwrap_or(0)
    }

    /// Check every cross-field constraint before any sampling.
    pub fn resolve(&self, purpose: Purpose) -> Result<Resolved, CliError> {
        let d = self.dimension;
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {}; this build reads version {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if purpose != Purpose::Contraction && self.replicas == 0 {
            return Err(invalid("replicas must be positive (R = 0 gives no statistics)"));
        }
        if self.n_list.is_empty() {
            return Err(invalid("n_list must contain at least one window size"));
        }
        if self.n_list.contains(&0) {
            return Err(invalid("window sizes in n_list must be positive"));
        }
        if self.q_max == 0 {
            return Err(invalid("q_max must be at least 1"));
        }
        if !(self.se_multiplier > 0.0) {
            return Err(invalid("se_multiplier must be positive"));
        }
        if self.lq_radius == 0 {
            return Err(invalid("lq_radius must be positive"));
        }
        if self.test_functions.is_empty() {
            return Err(invalid("test_functions must not be empty"));
        }
        for (i, f) in self.test_functions.iter().enumerate() {
            f.validate(Some(d)).map_err(|e| invalid(format!("test_functions[{i}]: {e}")))?;
        }
        let is_gff = matches!(self.model, CovarianceKind::GffGreen);
        if matches!(self.model, CovarianceKind::GffGradient { .. }) {
            return Err(invalid("model gff_gradient is derived; use gff_green with gradient_axis"));
        }
        if is_gff && d < 3 {
            return Err(invalid(format!("the lattice free field needs dimension >= 3, got {d}")));
        }
        let model_kind = match self.gradient_axis {
            Some(axis) => {
                if !is_gff {
                    return Err(invalid("gradient_axis is only supported with the gff_green model"));
                }
                if axis >= d {
                    return Err(invalid(format!("gradient_axis {axis} out of range for dimension {d}")));
                }
                CovarianceKind::GffGradient { axis }
            }
            None => self.model.clone(),
        };
        let model = CovarianceModel::new(d, model_kind).map_err(|e| invalid(format!("model: {e}")))?;
        let n_max = self.max_n();
        let lattice_size = match self.lattice_size {
            Some(m) => m,
            None if is_gff => (4 * n_max).max(8),
            None => default_torus_size(&model, n_max),
        };
        if lattice_size % 2 == 1 {
            return Err(invalid(format!("lattice_size {lattice_size} must be even")));
        }
        if lattice_size < 2 * n_max {
            return Err(invalid(format!(
                "lattice_size M={lattice_size} is smaller than 2N={} for the largest window",
                2 * n_max
            )));
        }
        let source = if is_gff {
            if lattice_size < 8 {
                return Err(invalid("the free-field box needs lattice_size >= 8"));
            }
            if n_max / 2 > lattice_size / 4 {
                return Err(invalid(format!(
                    "window N={n_max} leaves less than the M/4 boundary margin in a box of size {lattice_size}"
                )));
            }
            FieldSource::GffBox { d, m: lattice_size }
        } else {
            FieldSource::Torus { model: model.clone(), m: lattice_size }
        };
        let variance_base = self.variance_base.unwrap_or(model.variance());
        if !(variance_base > 0.0 && variance_base.is_finite()) {
            return Err(invalid(format!("variance_base must be positive, got {variance_base}")));
        }
        match purpose {
            Purpose::Tightness => {
                let alpha = self.alpha.ok_or_else(|| invalid("tightness needs alpha"))?;
                if alpha <= d as f64 / 2.0 {
                    return Err(invalid(format!(
                        "alpha={alpha} must exceed d/2={} for the tightness survey",
                        d as f64 / 2.0
                    )));
                }
                let t = self.tightness.as_ref().ok_or_else(|| invalid("tightness needs a tightness section"))?;
                if t.k_max == 0 || t.kernel_grid == 0 {
                    return Err(invalid("tightness k_max and kernel_grid must be positive"));
                }
            }
            Purpose::Contraction => {
                let c = self.contraction.as_ref().ok_or_else(|| invalid("contraction needs a contraction section"))?;
                if c.q < 2 {
                    return Err(invalid("contraction needs q >= 2"));
                }
                if let Some(r) = c.r.iter().find(|&&r| r == 0 || r >= c.q) {
                    return Err(invalid(format!("contraction order r={r} outside 1..q-1")));
                }
            }
            Purpose::Gff => {
                let g = self.gff.as_ref().ok_or_else(|| invalid("gff needs a gff section"))?;
                if g.power == 0 {
                    return Err(invalid("gff power must be positive"));
                }
                if g.ratio_range.0 >= g.ratio_range.1 {
                    return Err(invalid("gff ratio_range must be increasing"));
                }
                if g.power % 2 == 1 && !is_gff {
                    return Err(invalid("odd powers are checked against the free field; set model gff_green"));
                }
                if g.power % 2 == 1 && self.gradient_axis.is_some() {
                    return Err(invalid("odd-power checks use the field itself, not its gradient"));
                }
            }
            Purpose::Clt | Purpose::SampleDump => {}
        }
        if self.components.contains(&0) {
            return Err(invalid("components must be chaos orders q >= 1"));
        }
        Ok(Resolved { config: self.clone(), model, source, lattice_size, variance_base })
    }
}
