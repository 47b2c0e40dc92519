use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::{NUM_DT_BUCKETS, NUM_KEYS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    /// Scalar encoder output snapped to 8 fixed centroids in `[-1, 1]`.
    Iqae,
    /// Vector encoder output snapped to a learned codebook.
    Vq,
    /// No encoder: the decoder alone is a language model.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub k_buttons: usize,
    pub vocab: usize,
    pub use_dt: bool,
    pub quantizer: QuantizerKind,
    pub contour_weight: f64,
    pub margin_weight: f64,
    pub window_n: usize,
    /// Codeword dimension for [`QuantizerKind::Vq`].
    pub vq_dim: usize,
    /// Weight of the VQ commitment term.
    pub commitment_beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            num_layers: 2,
            k_buttons: 8,
            vocab: NUM_KEYS,
            use_dt: false,
            quantizer: QuantizerKind::Iqae,
            contour_weight: 1.0,
            margin_weight: 1.0,
            window_n: 128,
            vq_dim: 4,
            commitment_beta: 0.25,
        }
    }
}

impl ModelConfig {
    pub fn language_model() -> Self {
        Self {
            quantizer: QuantizerKind::None,
            contour_weight: 0.0,
            margin_weight: 0.0,
            ..Self::default()
        }
    }

    pub fn vq_vae() -> Self {
        Self {
            quantizer: QuantizerKind::Vq,
            contour_weight: 0.0,
            margin_weight: 0.0,
            ..Self::default()
        }
    }

    pub fn has_encoder(&self) -> bool {
        self.quantizer != QuantizerKind::None
    }

    pub fn dt_features(&self) -> usize {
        if self.use_dt {
            NUM_DT_BUCKETS
        } else {
            0
        }
    }

    /// Width of the per-step button representation fed to the decoder.
    pub fn button_dim(&self) -> usize {
        match self.quantizer {
            QuantizerKind::Iqae => 1,
            QuantizerKind::Vq => self.vq_dim,
            QuantizerKind::None => 0,
        }
    }

    pub fn encoder_input_size(&self) -> usize {
        self.vocab + self.dt_features()
    }

    /// Previous key (with start symbol) ⊕ button representation ⊕ ΔT.
    pub fn decoder_input_size(&self) -> usize {
        self.vocab + 1 + self.button_dim() + self.dt_features()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.vocab != NUM_KEYS {
            return fail(format!("vocab must be {NUM_KEYS}, got {}", self.vocab));
        }
        if self.k_buttons != 8 {
            return fail(format!("k_buttons must be 8, got {}", self.k_buttons));
        }
        if self.hidden_size == 0 || self.num_layers == 0 || self.window_n == 0 {
            return fail("hidden_size, num_layers and window_n must be positive".into());
        }
        if self.quantizer == QuantizerKind::Vq && self.vq_dim == 0 {
            return fail("vq_dim must be positive".into());
        }
        for (name, w) in [
            ("contour_weight", self.contour_weight),
            ("margin_weight", self.margin_weight),
            ("commitment_beta", self.commitment_beta),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("{name} must be a finite non-negative number, got {w}"));
            }
        }
        Ok(())
    }
}
