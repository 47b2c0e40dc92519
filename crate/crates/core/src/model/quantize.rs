use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::nn::Scalar;

pub const NUM_BUTTONS: usize = 8;

/// `C[i] = −1 + 2i/7`: eight evenly spaced centroids, endpoints included.
pub fn centroid<F: Scalar>(i: usize) -> F {
    F::lit(-1.0 + 2.0 * i as f64 / (NUM_BUTTONS - 1) as f64)
}

pub fn centroids<F: Scalar>() -> [F; NUM_BUTTONS] {
    std::array::from_fn(centroid)
}

/// Nearest centroid index; exact distance ties go to the higher index.
pub fn iqae_button<F: Scalar>(x: F) -> u8 {
    let c = centroids::<F>();
    // Candidate from the uniform grid, then an exact comparison among its
    // neighbours so the result is the true arg-min under the tie rule.
    let approx = ((x.as_f64() + 1.0) * 3.5).floor();
    let j = approx.clamp(0.0, (NUM_BUTTONS - 1) as f64) as usize;
    let lo = j.saturating_sub(1);
    let hi = (j + 2).min(NUM_BUTTONS - 1);
    let mut best = lo;
    for i in lo + 1..=hi {
        if (x - c[i]).abs() <= (x - c[best]).abs() {
            best = i;
        }
    }
    best as u8
}

/// Scalar encoder outputs and their quantized buttons.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<F> {
    pub enc_s: Vec<F>,
    pub buttons: Vec<u8>,
    pub centroid_values: Vec<F>,
}

pub fn iqae_quantize<F: Scalar>(enc_s: &[F]) -> EncoderOutput<F> {
    let buttons: Vec<u8> = enc_s.iter().map(|&x| iqae_button(x)).collect();
    let centroid_values = buttons.iter().map(|&b| centroid(b as usize)).collect();
    EncoderOutput {
        enc_s: enc_s.to_vec(),
        buttons,
        centroid_values,
    }
}

/// Learned `[k × d]` codebook.
#[derive(Clone, Debug, PartialEq)]
pub struct VqCodebook<F> {
    pub embeddings: Array2<F>,
}

impl<F: Scalar> VqCodebook<F> {
    /// Uniform `[-1/k, 1/k]` initialization.
    pub fn init(k: usize, d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / k as f64;
        Self {
            embeddings: Array2::from_shape_fn((k, d), |_| F::lit(rng.random_range(-bound..=bound))),
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

/// Row of `codebook` nearest to `z` in squared L2; ties go to the lower index.
pub fn nearest_codeword<F: Scalar>(z: ArrayView1<F>, codebook: ArrayView2<F>) -> usize {
    let mut best = 0;
    let mut best_dist = F::infinity();
    for (i, row) in codebook.rows().into_iter().enumerate() {
        let dist: F = row.iter().zip(z.iter()).map(|(&e, &v)| (v - e) * (v - e)).sum();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqOutput<F> {
    pub indices: Vec<usize>,
    pub z_q: Array2<F>,
    /// `Σ‖sg(z_e) − E[idx]‖²`
    pub codebook_loss: F,
    /// `Σ‖z_e − sg(E[idx])‖²`
    pub commitment_loss: F,
}

/// Forward values of VQ quantization. The two auxiliary losses are equal in
/// value and differ only in which side receives gradient during training.
pub fn vq_quantize<F: Scalar>(z_e: ArrayView2<F>, codebook: &VqCodebook<F>) -> VqOutput<F> {
    assert_eq!(z_e.ncols(), codebook.dim(), "z_e width must match codebook dimension");
    let indices: Vec<usize> = z_e.rows().into_iter().map(|r| nearest_codeword(r, codebook.embeddings.view())).collect();
    let z_q = codebook.embeddings.select(ndarray::Axis(0), &indices);
    let sq: F = (&z_e - &z_q).iter().map(|&v| v * v).sum();
    VqOutput {
        indices,
        z_q,
        codebook_loss: sq,
        commitment_loss: sq,
    }
}
