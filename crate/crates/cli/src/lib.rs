//! On-disk formats, run configuration, checkpoints and subcommand drivers
//! for the `tfcdiff` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod signal_file;

use thiserror::Error;

/// Command failure, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 1.
    #[error("usage error: {0}")]
    Usage(String),
    /// Unreadable, malformed or mismatched inputs. Exit code 2.
    #[error("data error: {0}")]
    Data(String),
    /// Divergence or non-finite values. Exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<tfcdiff::Error> for CliError {
    fn from(e: tfcdiff::Error) -> Self {
        match e {
            tfcdiff::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

pub(crate) fn usage_err(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
