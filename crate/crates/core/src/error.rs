use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("right-hand side has a nonzero mean (relative size {relative:e})")]
    NotMeanZero { relative: f64 },
    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("|delta| * C = {product} >= 1; positivity of the operator is not guaranteed")]
    DeltaTooLarge { product: f64 },
    #[error("invalid distribution: {0}")]
    InvalidSpec(String),
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error("invalid fit range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("ensemble too small: need at least 2 samples, got {0}")]
    EnsembleTooSmall(usize),
    #[error("zero frequency is not a valid probe")]
    ZeroFrequency,
    #[error("inconsistent probes: {0}")]
    InconsistentProbes(String),
    #[error("insufficient probes: need {needed} distinct |xi|, got {got}")]
    InsufficientProbes { needed: usize, got: usize },
    #[error("insufficient points for fit: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("invalid derivative order {order} for degree {degree}")]
    InvalidOrder { degree: usize, order: usize },
    #[error("disorder sample exceeds its bound: |sigma| = {value} > {bound}")]
    BoundViolated { value: f64, bound: f64 },
    #[error("averaged resolvent is not positive at probe {0}")]
    NotPositive(String),
}
