use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate mode label `{0}`")]
    DuplicateLabel(String),
    #[error("mode `{label}` has dimension {dim}; every mode needs at least 2 levels")]
    DimensionTooSmall { label: String, dim: usize },
    #[error("no mode labelled `{0}` in this space")]
    UnknownLabel(String),
    #[error("operands live on different Hilbert spaces")]
    SpaceMismatch,
    #[error("truncation {dim} too small for coherent amplitude |alpha| = {alpha}: Poisson tail {tail:.3e} exceeds 1e-6")]
    TruncationTooSmall { alpha: f64, dim: usize, tail: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operator is not Hermitian (deviation {0:.3e})")]
    NonHermitian(f64),
    #[error("operator is singular on the excited subspace")]
    Singular,
    #[error("no avoided crossing inside the scan window")]
    NoCrossing,
    #[error("numerical failure at t = {t}: {what}")]
    NumericalFailure { t: f64, what: String },
    #[error("adaptive step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("steady state not reached within t = {0}")]
    NotConverged(f64),
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("Hilbert space of dimension {dim} exceeds the budget of {budget}")]
    SpaceTooLarge { dim: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
