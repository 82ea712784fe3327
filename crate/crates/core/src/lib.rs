//! Hermite-chaos functionals of stationary Gaussian fields on Z^d.
//!
//! The crate samples lattice Gaussian fields (circulant embedding on a torus, or the
//! zero-boundary Gaussian free field on a box), evaluates the distribution-valued
//! field `<Phi_N, f> = N^-d sum_{j in B_N} H(X_j) f(j/N)` and its chaos components,
//! and checks the finite-N variance, contraction and Sobolev-norm formulas against
//! Monte Carlo.

pub mod basis;
pub mod chaos;
pub mod covariance;
pub mod error;
pub mod fft;
pub mod green;
pub mod hermite;
pub mod lattice;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use covariance::{CovarianceKind, CovarianceModel, LqSum};
pub use error::{Error, Result};
pub use green::{continuous_green, discrete_green, GreenFunction};
pub use hermite::{eval_hermite, expand, expand_polynomial, HermiteExpansion, LimitConstant, Observable};
pub use sampler::{extract_window, gradient_field, sample_gff, sample_stationary, FieldSample, GffSampler, SampleKind, StationarySampler, Window};
pub use chaos::{ChaosStatistic, Normalization, TestFunction};
pub use basis::{EigenMode, SobolevCoefficients, SobolevProjector};
pub use stats::{ReplicaAccumulator, Rule, Verdict};
