//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An object was used in a state it was not built for (e.g. stale filters).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A matrix factorization or other numerical step failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A file did not match the expected binary layout.
    #[error("format error: {0}")]
    Format(String),

    /// A file ended before the payload declared in its header.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Array dimensions of two inputs do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration file or override could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable code, used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid",
            Error::InvalidState(_) => "state",
            Error::Numerical(_) => "numeric",
            Error::Format(_) => "format",
            Error::Truncated(_) => "truncated",
            Error::DimensionMismatch(_) => "dims",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
