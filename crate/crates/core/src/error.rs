use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unparsable dataset filename {0:?} (expected <identity>_<instance>.png)")]
    InvalidFilename(String),

    #[error("invalid label {0:?}: {1}")]
    InvalidLabel(String, &'static str),

    #[error("duplicate datapoint ({identity}, {instance})")]
    DuplicatePoint { identity: String, instance: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("datapoint keys differ between paired datasets: {0}")]
    KeyMismatch(String),

    #[error("identity {0:?} is not enrolled in the gallery")]
    UnknownIdentity(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("stage {kind} (cache key {key}) failed: {source}")]
    Stage {
        kind: String,
        key: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }
}
