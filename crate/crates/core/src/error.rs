//! Crate-wide error type.

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes or widths do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An input lies outside the mathematical domain of the operation
    /// (log of a non-positive value, |rho| >= 1, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An index (class label, axis, row) is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A caller broke an API contract (missing gradient, empty batch,
    /// mismatched block structure, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed config, checkpoint, or result file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
