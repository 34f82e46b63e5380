use thiserror::Error;

/// Errors produced by simulation components.
///
/// Variants are grouped by failure class so callers can map them to process
/// exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or parameter shapes are inconsistent.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed on-disk payload (IDX files, parameter snapshots).
    #[error("format error: {0}")]
    Format(String),

    /// Arguments outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced non-finite values; the message locates it.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The federation protocol cannot proceed (e.g. no eligible clients).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
