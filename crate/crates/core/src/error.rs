use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    /// Cosine similarity is undefined when either curve has zero norm.
    #[error("cosine similarity undefined: {0} curve has zero norm")]
    UndefinedCosine(&'static str),

    #[error("region is empty: {0}")]
    EmptyRegion(String),

    #[error("label {0} not present in mask")]
    LabelAbsent(u8),

    #[error("regions overlap at voxel (z={z}, y={y}, x={x}): labels {first} and {second}")]
    OverlappingRegions {
        z: usize,
        y: usize,
        x: usize,
        first: u8,
        second: u8,
    },

    #[error("{path}: payload size mismatch, expected {expected} bytes, found {actual}")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: unsupported format {found} (this build reads {supported})")]
    VersionMismatch {
        path: PathBuf,
        found: String,
        supported: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
