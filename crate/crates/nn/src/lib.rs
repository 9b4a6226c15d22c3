//! Tape-based autodiff, AdamW, and the transformer power predictor with its
//! training loop.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use graph::{Graph, NodeId};
pub use model::{ModelConfig, Prediction, TransformerWeights};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainReport};
