use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: corrupt queue entry: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("reading `{0}` is already queued or acknowledged")]
    DuplicateId(String),
    #[error("reading `{id}` timestamp {timestamp} precedes the previous reading at {previous}")]
    NonMonotonic {
        id: String,
        timestamp: String,
        previous: String,
    },
    #[error("invalid reading: {0}")]
    InvalidRecord(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid endpoint `{0}`")]
    Endpoint(String),
    #[error("cannot bind mock endpoint to {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TelemetryError> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> TelemetryError {
    let path = path.into();
    move |source| TelemetryError::Io { path, source }
}
