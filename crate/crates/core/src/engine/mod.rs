//! Stateful single-step decoding for live performance: button presses in,
//! sampled piano keys out.

mod bench;
mod sampling;
mod session;

pub use bench::{bench_press, summarize_latencies, LatencySummary};
pub use sampling::{argmax, inverse_cdf, sample_key, tempered_probs};
pub use session::{DecoderSession, DecoderWeights, NoteEvent, NoteKind, DEFAULT_TEMPERATURE, NUM_BUTTONS};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("temperature must be finite and non-negative, got {0}")]
    InvalidTemperature(f64),
    #[error("button {0} out of range 0..8")]
    InvalidButton(u8),
    #[error("lookahead is unavailable for models with time features")]
    LookaheadUnsupported,
    #[error("checkpoint does not fit the decoder: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    InvalidArgument(String),
}
