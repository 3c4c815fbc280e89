use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    /// `A + diag(B theta)` is numerically singular at the requested parameters.
    #[error("parameters outside the domain: reciprocal condition {rcond:e}")]
    NotInDomain { rcond: f64 },

    #[error("invalid sparsity: k = {k} for vectors of length {n}")]
    InvalidSparsity { n: usize, k: usize },

    #[error("singular draw (reciprocal condition {rcond:e})")]
    SingularDraw { rcond: f64 },

    #[error("infeasible spectrum for n = {n}, gamma = {gamma}")]
    InfeasibleSpectrum { n: usize, gamma: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    ConvergenceFailure { iterations: usize, estimate: f64 },

    #[error("insufficient data for a scaling fit: {0}")]
    InsufficientData(String),

    #[error("{what} = {value} exceeds the supported maximum {max}")]
    TooLarge {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("index tuple has length {got}, pairing expects {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("pairings act on different sets: {left} vs {right} points")]
    SizeMismatch { left: usize, right: usize },

    #[error("Gram matrix is singular for k = {k}, d = {d}")]
    SingularGram { k: usize, d: usize },

    #[error("cost envelope violated at x = {x}: {check}")]
    ReportedViolation { x: f64, check: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
