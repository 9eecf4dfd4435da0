//! Small encoder-decoder transformer trained by masked-token denoising, with hand-written
//! backpropagation. The encoder output, pooled over positions, is the molecular
//! representation used downstream.

mod bundle;
mod config;
mod embed;
mod model;
mod ops;
mod params;
mod scalar;
mod train;

pub use bundle::{load_bundle, save_bundle, ModelBundle, TrainingMeta};
pub use config::{ModelConfig, Pooling};
pub use embed::{embed_molecule, embed_tokens, pool, RepVector};
pub use model::{
    backward, encode, forward_denoise, forward_with_cache, loss_and_gradients, ForwardCache,
};
pub use ops::Matrix;
pub use params::{
    init_model, manifest, sinusoidal_table, Attention, DecoderLayer, EncoderLayer, Gradients,
    LayerNorm, Linear, ModelParams, ParamSet, TensorKind, TensorSpec,
};
pub use scalar::Scalar;
pub use train::{masked_accuracy, pretrain, pretrain_corpus, TrainConfig, TrainReport};

use crate::selfies::SelfiesError;
use crate::smiles::SmilesError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, thiserror::Error)]
pub enum TransformerError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("sequence has no content positions to pool")]
    EmptySequence,
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error("non-finite parameter after training step {0}")]
    NonFinite(usize),
    #[error("model bundle is inconsistent: {0}")]
    BundleMismatch(String),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Selfies(#[from] SelfiesError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
