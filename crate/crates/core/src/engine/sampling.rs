use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::nn::softmax;

/// `softmax(logits / temperature)`; `temperature` must be positive.
pub fn tempered_probs(logits: ArrayView1<f32>, temperature: f64) -> Array1<f64> {
    let scaled = logits.mapv(|v| f64::from(v) / temperature);
    softmax(scaled.view())
}

/// First index of the maximum.
pub fn argmax(values: ArrayView1<f32>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw: the first index whose cumulative probability exceeds `u`.
pub fn inverse_cdf(probs: ArrayView1<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the total just under 1; take the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Temperature sampling; `temperature == 0` is argmax and draws nothing.
pub fn sample_key(logits: ArrayView1<f32>, temperature: f64, rng: &mut impl Rng) -> usize {
    if temperature == 0.0 {
        return argmax(logits);
    }
    inverse_cdf(tempered_probs(logits, temperature).view(), rng.random::<f64>())
}
