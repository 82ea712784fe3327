use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("variance_base must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("q_max must be at least 1")]
    ZeroQMax,

    #[error("Gauss-Hermite quadrature did not converge: coefficient change {change:e} at {nodes} nodes")]
    QuadratureNonConvergence { nodes: usize, change: f64 },

    #[error("all Hermite coefficients vanish; the observable is a.s. constant")]
    ConstantObservable,

    #[error("lattice sum of |rho|^{q} does not converge (partial {partial:e} at radius {radius})")]
    Divergent { q: u32, radius: usize, partial: f64 },

    #[error("circulant embedding failed: min spectral value {min:e} < -1e-9 * max ({max:e}); increase the torus size M")]
    EmbeddingFailure { min: f64, max: f64 },

    #[error("green function methods disagree at u={u:?}: quadrature {quadrature}, walk {walk} +/- {se}")]
    GreenMismatch { u: Vec<i64>, quadrature: f64, walk: f64, se: f64 },

    #[error("dimension {got} not supported here (need {need})")]
    Dimension { got: usize, need: &'static str },

    #[error("continuous Green function is singular at x = y")]
    Singular,

    #[error("size mismatch: expected {expected} values, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("window of size N={n} does not fit: margin {margin} < required {required}")]
    OutOfBounds { n: usize, margin: isize, required: usize },

    #[error("brute-force sum needs {iterations:e} iterations, above the 1e10 guard")]
    Infeasible { iterations: f64 },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("replica {replica} failed: {source}")]
    Replica { replica: u64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
