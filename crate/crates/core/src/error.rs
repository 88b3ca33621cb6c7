use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the acquisition, calibration and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("forward model out of ADC range: {0}")]
    OutOfRange(String),

    #[error("underdetermined fit: {usable} usable samples, at least {required} required")]
    Underdetermined { usable: usize, required: usize },

    #[error("rank-deficient design: condition number {condition:.3e} exceeds {threshold:.0e}")]
    RankDeficient { condition: f64, threshold: f64 },

    #[error("Gram matrix not positive semidefinite: smallest eigenvalue {min_eigenvalue:.3e}")]
    NonPsdGram { min_eigenvalue: f64 },

    #[error("solver did not converge after {iterations} iterations (worst KKT violation {worst_violation:.3e})")]
    NotConverged { iterations: usize, worst_violation: f64 },

    #[error("damped normal equations singular at lambda {lambda:.3e}")]
    Singular { lambda: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical failures of a fitting routine, as opposed to bad data or I/O.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NonPsdGram { .. }
                | Error::NotConverged { .. }
                | Error::Singular { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
