use thiserror::Error;

/// Errors raised by estimators, formula engines and the design solver.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// A numerical procedure failed (non-PSD matrix, zero density, no root).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A calibration or design problem has no solution.
    #[error("no solution: {message} (residual {residual:.3e})")]
    NoSolution { message: String, residual: f64 },
    /// Invalid configuration or malformed input file.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numeric(msg.into()))
}
