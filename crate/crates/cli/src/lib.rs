//! Experiment harness around `qratio-core`: config files, flag overrides,
//! CSV outputs, agent checkpoints, and the parallel sweep driver.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod outputs;

use std::fmt;

/// Harness-level failures, split by exit code: configuration problems exit
/// with 1, file-system problems with 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Core errors surfacing through the harness are configuration problems
/// (bad dimensions, invalid settings), not file-system ones.
pub fn config_err(e: qratio_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

pub fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}
