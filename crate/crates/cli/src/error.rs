use cpg_core::CpgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("solver failed: {0}")]
    Solver(#[from] CpgError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write output: {0}")]
    Output(String),
}

impl CliError {
    /// 1 for configuration problems, 2 for solver failures, 3 for output.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io { .. } | CliError::Output(_) => 3,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
