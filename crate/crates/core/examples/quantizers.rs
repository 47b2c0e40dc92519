//! Snap encoder outputs to buttons with both quantizers and show the
//! auxiliary VQ losses.
//!
//!     cargo run --example quantizers

use ndarray::array;
use piano_genie::model::{centroids, iqae_quantize, vq_quantize, VqCodebook};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let c = centroids::<f64>();
    println!("centroids: {:?}", c.map(|v| (v * 1e4).round() / 1e4));

    let enc = [-1.3, -0.9, -0.5, 0.0, (c[3] + c[4]) / 2.0, 0.6, 1.4];
    let q = iqae_quantize(&enc);
    for ((x, b), v) in enc.iter().zip(&q.buttons).zip(&q.centroid_values) {
        println!("enc {x:+.4} -> button {b} (centroid {v:+.4})");
    }

    let book = VqCodebook::<f64>::init(8, 4, &mut ChaCha8Rng::seed_from_u64(0));
    let z = array![[0.1, 0.0, -0.05, 0.02], [-0.1, 0.1, 0.1, -0.1], [0.0, 0.0, 0.0, 0.0]];
    let out = vq_quantize(z.view(), &book);
    println!("\nVQ indices {:?}", out.indices);
    println!("codebook loss {:.5}, commitment loss {:.5}", out.codebook_loss, out.commitment_loss);
}
