//! Reverse-mode differentiable kernel: just enough machinery for stacked
//! LSTMs, affine heads, softmax cross-entropy, Adam and gradient checking.
//!
//! Everything is generic over [`Scalar`] so training runs in `f32` while the
//! gradient checks exercise the exact same code in `f64`.

mod adam;
mod gradcheck;
mod kernels;
mod lstm;
mod params;
mod scalar;
mod tape;

pub use adam::{adam_update, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_gradcheck, CoordinateError, GradcheckReport};
pub use kernels::{affine, log_softmax, sigmoid, softmax, softmax_nll};
pub use lstm::{
    lstm_sequence, lstm_step, LstmLayerParams, LstmState, GATE_F, GATE_G, GATE_I, GATE_O,
    NUM_GATES,
};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("index {index} out of range for {op} (size {size})")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("backward called on {0}")]
    Backward(&'static str),
    #[error("non-finite gradient in parameter `{0}`; step rejected")]
    Divergence(String),
}

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> NnError {
    NnError::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
