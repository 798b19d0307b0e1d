use std::path::{Path, PathBuf};

/// Failures of the std layer. Validation problems map to exit code 1,
/// everything else to 2.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] fluentedit_core::Error),
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 1,
            AppError::Core(fluentedit_core::Error::InvalidArgument { .. } | fluentedit_core::Error::Shape { .. }) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, reason: impl std::fmt::Display) -> Self {
        AppError::Format {
            path: path.as_ref().to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> AppError {
    AppError::Validation(msg.into())
}
