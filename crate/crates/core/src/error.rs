use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("duplicate patient_id `{0}`")]
    DuplicateId(String),

    #[error("line {line}: column `{column}` must be 0 or 1, found `{value}`")]
    NonBinary {
        line: u64,
        column: String,
        value: String,
    },

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{groups} groups exceed the closed-testing limit of {limit}")]
    TooManyGroups { groups: usize, limit: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
