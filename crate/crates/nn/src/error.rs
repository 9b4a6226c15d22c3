use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward needs a 1x1 loss, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("loss does not depend on any trainable tensor")]
    Detached,
    #[error("softmax over an empty row")]
    EmptyRow,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("non-finite loss at K={k} L={l} epoch {epoch} batch {batch}")]
    NonFinite { k: usize, l: usize, epoch: usize, batch: usize },
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] cellfree_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
