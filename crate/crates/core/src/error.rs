use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine, the data pipeline and the checkpoint store.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Batch norm asked for inference before any training batch was seen.
    #[error("batch norm running statistics are uninitialized")]
    UninitializedStatistics,

    #[error("geometry error: {0}")]
    Geometry(String),

    /// An API precondition was broken by the caller (e.g. backward without forward).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("model has not been trained")]
    Untrained,

    #[error("checksum mismatch for {what}: expected {expected}, found {found}")]
    Checksum {
        what: String,
        expected: String,
        found: String,
    },

    #[error("unsupported checkpoint version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("path already exists: {} (use --force to overwrite)", .0.display())]
    PathExists(PathBuf),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure stems from bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Geometry(_) | Error::PathExists(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
