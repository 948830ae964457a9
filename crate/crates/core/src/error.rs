use thiserror::Error;

/// Errors raised by the laboratory's operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid spectral space: {0}")]
    InvalidSpace(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("negative time {0} passed to the semigroup")]
    NegativeTime(f64),
    #[error("Yosida parameter must be positive, got {0}")]
    NonPositiveYosida(f64),
    #[error("time {0} is not a grid point")]
    OffGrid(f64),
    #[error("paths live on different grids or spaces")]
    GridMismatch,
    #[error("target horizon {target} precedes path horizon {horizon}")]
    HorizonBeforePath { target: f64, horizon: f64 },
    #[error("invalid control signal: {0}")]
    InvalidControl(String),
    #[error("non-finite value in {context} at t = {time}")]
    NonFinite { context: String, time: f64 },
    #[error("control tree of {leaves} leaves exceeds budget {budget}; enable memoization")]
    BudgetExceeded { leaves: f64, budget: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),
    #[error("test-function premise violated at net point {index}: excess {excess}")]
    PremiseViolated { index: usize, excess: f64 },
    #[error("test functional does not touch at the point: gap {gap}")]
    NotTouching { gap: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
