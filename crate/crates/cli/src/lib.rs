//! Command implementations behind the `rectnet` binary.

pub mod actstats;
pub mod config;
pub mod results;
pub mod run;

use std::path::PathBuf;

pub use actstats::{cmd_actstats, ActStatsArgs};
pub use config::ExperimentConfig;
pub use run::{cmd_gradcheck, cmd_train, run_gradcheck};

/// Overrides the directory that relative `output_dir` values resolve against.
pub const OUTPUT_ROOT_ENV: &str = "RECTNET_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or config; exit code 2.
    #[error("usage error: {0}")]
    Usage(String),
    /// A check failed or the run could not complete; exit code 1.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<rectnet::Error> for CliError {
    fn from(e: rectnet::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

/// The root for relative output paths: `$RECTNET_OUTPUT_ROOT` if set,
/// otherwise the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}
