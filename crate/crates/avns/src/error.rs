use std::path::{Path, PathBuf};

/// Errors surfaced by the file formats, runners and CLI.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] avns_core::Error),
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Self::Format { path: path.as_ref().to_path_buf(), msg: msg.into() }
    }

    /// 2 for usage errors, 3 for I/O and file-format errors, 4 for
    /// numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Io { .. } | Self::Format { .. } => 3,
            Self::Core(avns_core::Error::Diverged { .. }) => 4,
            Self::Core(avns_core::Error::Format(_)) => 3,
            Self::Core(_) => 2,
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

pub(crate) fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}
