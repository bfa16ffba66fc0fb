//! Knowledge-embedding model: hashed bag-of-tokens features projected by a
//! trainable matrix, trained with InfoNCE.

mod eval;
mod features;
mod loss;
mod model;
mod train;

pub use eval::{recall_at_k, EvalQuery, Recall};
pub use features::{bucket, fnv1a64, tokenize, FeatureVector, D_FEAT};
pub use loss::{info_nce_grad, info_nce_loss, info_nce_loss_and_grad, SparseGrad, TrainingInstance};
pub use model::{Embedding, EmbeddingModel, TextEncoder, D_EMB, MODEL_SCHEMA};
pub use train::{train, TrainConfig, TrainReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid training instance: {0}")]
    InvalidInstance(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged: first epoch loss {first}, final epoch loss {last}")]
    TrainingDiverged { first: f64, last: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("relevant document id {0} is not in the corpus")]
    UnknownDocId(u64),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
