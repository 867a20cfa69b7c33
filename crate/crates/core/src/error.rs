use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A quantity was requested outside the set where it is finite.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numeric overflow: {0}")]
    Overflow(String),
    #[error("malformed path: {0}")]
    Shape(String),
    #[error("sample size: {0}")]
    Size(String),
    #[error("simulation budget exhausted: {0}")]
    Budget(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("resampling degenerate: {0}")]
    Degenerate(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
