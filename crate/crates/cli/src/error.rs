use std::path::PathBuf;

use ivkit::IvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("no usable rows ({dropped} dropped for missing or non-finite values)")]
    NoUsableRows { dropped: usize },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] IvError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("every requested estimator failed")]
    AllFailed,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 usage or configuration, 2 data, 3 numerical failure of
    /// every requested estimator.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Core(IvError::Config(_)) => 1,
            Self::AllFailed => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
