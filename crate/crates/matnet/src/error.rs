use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] matnet_core::error::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("checkpoint {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Other(String),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        AppError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// 1 for bad input or configuration, used by the CLI's exit code.
    pub fn exit_code(&self) -> i32 {
        1
    }
}

impl From<matnet_core::tensor::TensorError> for AppError {
    fn from(e: matnet_core::tensor::TensorError) -> Self {
        AppError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
