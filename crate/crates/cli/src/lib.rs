//! Front end for chaos-functional experiments: config validation, orchestration and
//! report emission.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{execute, run};
pub use config::{ExperimentConfig, Purpose};
pub use report::{PlotRow, Report};

/// Exit codes: 0 all verdicts pass, 2 a verdict failed, 3 invalid input, 4 numerical failure, 1 I/O.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const STATISTICAL: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] bmlab_core::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use bmlab_core::Error as E;
        fn core(e: &E) -> i32 {
            match e {
                E::QuadratureNonConvergence { .. } | E::EmbeddingFailure { .. } | E::GreenMismatch { .. } => {
                    exit::NUMERICAL
                }
                E::Replica { source, .. } => core(source),
                _ => exit::VALIDATION,
            }
        }
        match self {
            Self::Validation(_) => exit::VALIDATION,
            Self::Core(e) => core(e),
            Self::Io { .. } => exit::IO,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bm-lab", version, about = "Monte Carlo checks for Hermite-chaos functionals of Gaussian fields")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; machine parallelism when unset.
    #[arg(long, global = true, env = "BM_LAB_THREADS")]
    pub threads: Option<usize>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hermite expansion of an observable.
    Expand {
        /// `x^p`, `poly:a0,a1,..` (coefficients of 1, x, ..) or `hermite:h0,c1,c2,..`.
        spec: String,
        /// Variance of the Gaussian reference measure.
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        #[arg(long, default_value_t = 16)]
        q_max: u32,
    },
    /// Variance, normality, fourth-moment and covariance checks of the rescaled functional.
    Clt,
    /// Contraction norms against N.
    Contraction,
    /// Powers of the lattice free field (odd: Green-form check; even: white-noise checks).
    Gff,
    /// Negative Sobolev norms against N.
    Tightness,
    /// Tidy CSV of the plottable statistics of a finished run.
    Plotdata {
        /// Run directory holding report.json; `--out` or the current directory when unset.
        run_dir: Option<PathBuf>,
    },
    /// Write raw field samples.
    SampleDump,
}
