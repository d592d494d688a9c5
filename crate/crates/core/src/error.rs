use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e}, value {value:.6e})")]
    NotConverged { iterations: usize, grad_norm: f64, value: f64 },
    #[error("empty cell: {0}")]
    EmptyCell(String),
    #[error("empty data set")]
    EmptyData,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
