use thiserror::Error;

/// Errors shared across the crate.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("basis dimension {j} must be at least the spline order {q}")]
    InvalidDimension { j: usize, q: usize },

    #[error("evaluation point {0} is outside [0, 1]")]
    DomainError(f64),

    #[error("spline order {0} does not support this operation")]
    UnsupportedOrder(usize),

    #[error("design contains no observations")]
    EmptyDesign,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("credibility parameter gamma = {0} must lie in (0, 1)")]
    InvalidGamma(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
