//! Fixtures shared by the benchmarks.

use bmlab_core::covariance::{CovarianceKind, CovarianceModel};

/// Nearest-neighbour model on `Z^2` with `rho(e_i) = 0.15`.
pub fn weak_nn() -> CovarianceModel {
    CovarianceModel::new(
        2,
        CovarianceKind::FiniteSupport { table: vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.15], vec![0.0, 1.0, 0.15]] },
    )
    .expect("valid model")
}
