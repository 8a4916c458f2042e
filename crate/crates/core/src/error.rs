use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("manifest contains no records")]
    NoRecords,

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("image file not found: {0}")]
    MissingFile(PathBuf),

    #[error("cannot decode image: {0}")]
    Decode(String),

    #[error("landmarks outside image bounds: {0}")]
    Landmarks(String),

    #[error("cannot split: {0}")]
    Split(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("filter bank `{source_id}`: {message}")]
    FilterBank { source_id: String, message: String },

    #[error("{method} extractor failed: {message}")]
    Extractor { method: String, message: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn extractor(method: impl ToString, message: impl ToString) -> Self {
        Error::Extractor {
            method: method.to_string(),
            message: message.to_string(),
        }
    }
}
