//! Error type shared across the crate.

use thiserror::Error;

/// Unified error for configuration, data, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter or option value supplied by the caller.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data (bad file layout, shape mismatch, corrupt bytes).
    #[error("format error: {0}")]
    Format(String),

    /// A computation left the numeric domain it needs (divergent integral,
    /// non-finite loss, empty candidate set).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
