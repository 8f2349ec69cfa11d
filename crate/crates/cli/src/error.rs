use std::io;
use std::path::{Path, PathBuf};

/// Failure categories; each maps to its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("training aborted: {0}")]
    Train(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("{failed} of {total} ablation cells failed")]
    Ablation { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Format { .. } => 4,
            CliError::Train(_) => 5,
            CliError::Eval(_) => 6,
            CliError::Ablation { .. } => 7,
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, reason: impl ToString) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
