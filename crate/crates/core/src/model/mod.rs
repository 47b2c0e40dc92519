//! The button autoencoder: bidirectional LSTM encoder, scalar (IQAE) or
//! vector (VQ) quantizer, autoregressive LSTM decoder, and the language
//! model baseline that is the decoder with its button input removed.

mod checkpoint;
mod config;
mod network;
mod quantize;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, ParamEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, QuantizerKind};
pub use network::{
    decoder_forward, encoder_forward, loss_contour, loss_margin, one_hot_rows, Batch, ForwardPass,
    FrozenQuantization, GenieModel, LossValues, QuantizeMode, START_SYMBOL,
};
pub use quantize::{
    centroid, centroids, iqae_button, iqae_quantize, nearest_codeword, vq_quantize, EncoderOutput,
    VqCodebook, VqOutput,
};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
