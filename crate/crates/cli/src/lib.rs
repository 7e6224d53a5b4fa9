//! Command-line harness: configuration, the training loop, evaluation,
//! ablation sweeps, and checkpoint persistence. `main.rs` is a thin
//! argument-parsing shell over these modules so integration tests can
//! drive the same code in process.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod evalcmd;
pub mod report;
pub mod trainer;
pub mod wavelet_cmd;

use thiserror::Error;

/// CLI failure classes; each maps to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or invalid configuration. Exit code 1.
    #[error("usage: {0}")]
    Usage(String),
    /// Unreadable or malformed data, mismatched shapes. Exit code 2.
    #[error("data: {0}")]
    Data(String),
    /// NaN or infinite values in training or inference. Exit code 3.
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// Single-line rendering for stderr: `error: <class>: <message>`.
    pub fn render(&self) -> String {
        let text = self.to_string().replace('\n', "; ");
        format!("error: {text}")
    }
}

impl From<wdmir_core::Error> for CliError {
    fn from(e: wdmir_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
