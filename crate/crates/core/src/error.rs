use thiserror::Error;

/// Errors raised by kernel, quadrature and certification routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The series hypothesis `sum K^m f <= c f` fails at a state of the absorbing set.
    #[error("series hypothesis fails at state {state}: ratio {ratio} exceeds c = {c}")]
    SeriesHypothesis { state: usize, ratio: f64, c: f64 },

    /// `gamma_j <= alpha + delta * sum_{i<j} gamma_i` fails at the (1-based) index.
    #[error("recursion hypothesis violated at j = {index}")]
    GronwallHypothesis { index: usize },

    #[error("quadrature failure: {0}")]
    Quadrature(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
