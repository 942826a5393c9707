use thiserror::Error;

/// Error type shared across the lab. The variants mirror the exit-code
/// classes of the CLI: parameter/config problems are caller mistakes, numeric
/// failures mean a computation could not be completed soundly.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied dimensions, ranges, or modes are invalid.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A computation produced or received non-finite values, or a matrix
    /// operation failed (e.g. a factorization on a non-PD matrix).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Full-batch training diverged or produced a non-finite loss.
    #[error("training diverged: {0}")]
    Training(String),

    /// A file did not round-trip: malformed header, bad column count, etc.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
