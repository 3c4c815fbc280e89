use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error(transparent)]
    Core(#[from] biaffine_core::Error),

    #[error("study failed: {failed} of {total} runs failed")]
    StudyFailed { failed: usize, total: usize },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json { path: path.to_path_buf(), source }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv { path: path.to_path_buf(), source }
    }

    /// Process exit status: 2 invalid input, 3 study failure, 4 IO, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Core(biaffine_core::Error::InvalidConfig(_)) => 2,
            Self::Core(biaffine_core::Error::InvalidSparsity { .. }) => 2,
            Self::Core(biaffine_core::Error::InfeasibleSpectrum { .. }) => 2,
            Self::Core(biaffine_core::Error::TooLarge { .. }) => 2,
            Self::Json { source, .. } if !source.is_io() => 2,
            Self::StudyFailed { .. } => 3,
            Self::Io { .. } | Self::Json { .. } | Self::Csv { .. } => 4,
            Self::Core(_) => 1,
        }
    }
}
