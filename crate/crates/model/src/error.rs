use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] ipdnet_autodiff::AutodiffError),
    #[error(transparent)]
    Core(#[from] ipdnet_core::CoreError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input has {got} channels, model expects {want}")]
    Channels { got: usize, want: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient of {param} in epoch {epoch}, batch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize, param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
