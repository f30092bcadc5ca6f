use thiserror::Error;

/// Errors produced by the library.
///
/// `InvalidArgument` and `DimensionMismatch` indicate a caller bug or bad
/// configuration and are reported before any work is done. `Parse` carries the
/// 1-based row number of the offending CSV line. `Numeric` signals a
/// computation that left the representable range (non-finite iterates,
/// degenerate statistics that cannot be recovered).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for errors caused by bad inputs or configuration, as opposed to
    /// runtime/numeric failures. CLI layers use this to pick exit codes.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::Parse { .. }
        )
    }
}
