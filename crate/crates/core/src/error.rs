use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is singular (pivot {pivot:e} below threshold)")]
    Singular { pivot: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("renormalized product overflowed or collapsed at step {step}")]
    Overflow { step: usize },

    #[error("effective sample size {ess:.1} below reliability floor at s = {s}")]
    DegenerateEss { s: f64, ess: f64 },

    #[error("no root of log h found: {0}")]
    NoRoot(String),

    #[error("non-positive input to a log-scale fit: {0}")]
    NonPositive(String),

    #[error("degenerate tail: top order statistics are all equal")]
    DegenerateTail,
}

pub type Result<T> = std::result::Result<T, Error>;
