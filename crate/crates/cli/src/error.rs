use std::path::{Path, PathBuf};

use ipdnet_core::CoreError;
use ipdnet_model::ModelError;
use thiserror::Error;

/// Exit code 1 for rejected inputs, 2 for failures while running.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: Box<CliError> },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::File { source, .. } => source.exit_code(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_) | CoreError::Wav(_) => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Core(c) => c.into(),
            ModelError::Config(_) | ModelError::Channels { .. } | ModelError::Checkpoint(_) | ModelError::Json(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches a file path to an error.
pub trait WithPath<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T, E: Into<CliError>> WithPath<T> for std::result::Result<T, E> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::File {
            path: path.to_path_buf(),
            source: Box::new(e.into()),
        })
    }
}
