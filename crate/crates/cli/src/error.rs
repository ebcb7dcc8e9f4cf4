use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Core(#[from] mll_core::Error),

    /// A check ran to completion and found values outside tolerance.
    #[error("{0}")]
    Tolerance(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 1 for tolerance failures and numerical breakdowns, 2 for bad input
    /// or IO.
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Tolerance(_) | CliError::Core(mll_core::Error::Divergence { .. }) => ExitCode::from(1),
            _ => ExitCode::from(2),
        }
    }
}
