use std::process::ExitCode;

use iglu_telemetry::TelemetryError;
use thiserror::Error;

/// Failure of a subcommand, mapped onto the documented exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable or invalid input data, I/O failures (exit 2).
    #[error("{0}")]
    Data(String),
    /// A fitting routine failed numerically (exit 3).
    #[error("{0}")]
    Solver(String),
    /// Upload incomplete (exit 4).
    #[error("{0}")]
    Network(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Network(_) => 4,
        })
    }
}

impl From<iglu_core::Error> for CliError {
    fn from(e: iglu_core::Error) -> Self {
        if e.is_solver_failure() {
            CliError::Solver(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<TelemetryError> for CliError {
    fn from(e: TelemetryError) -> Self {
        match e {
            TelemetryError::Endpoint(_) | TelemetryError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TelemetryError::Bind { .. } => CliError::Network(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps an I/O error with the path it concerns.
pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}
