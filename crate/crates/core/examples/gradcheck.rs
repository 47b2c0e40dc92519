//! Check the analytic gradient of the full IQAE loss against central
//! differences on a tiny model.
//!
//!     cargo run --example gradcheck

use piano_genie::data::TrainingExample;
use piano_genie::model::{Batch, GenieModel, ModelConfig, ModelError, QuantizeMode};
use piano_genie::nn::{finite_diff_gradcheck, NnError, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = ModelConfig { hidden_size: 4, window_n: 8, ..ModelConfig::default() };
    let model = GenieModel::<f64>::init(config.clone(), &mut rng)?;
    let batch = Batch::new(&[
        TrainingExample::from_keys(&[39, 41, 43, 44, 46, 44, 43, 41], 4),
        TrainingExample::from_keys(&[30, 27, 27, 35, 32, 30, 34, 39], 4),
    ])?;

    // freeze the button choices so the loss is smooth around this point
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard)?;
    println!("loss {:?}", pass.values(&tape));
    let frozen = pass.quantization.expect("IQAE has a quantizer");

    let report = finite_diff_gradcheck(
        &model.params,
        |params, tape| {
            let m = GenieModel { config: config.clone(), params: params.clone() };
            let pass = m.forward(tape, &batch, QuantizeMode::Frozen(&frozen)).map_err(|e| match e {
                ModelError::Nn(e) => e,
                other => NnError::Divergence(other.to_string()),
            })?;
            Ok(pass.total)
        },
        1e-4,
        10,
        &mut rng,
    )?;
    println!("checked {} coordinates, max relative error {:.2e}", report.checked, report.max_rel_err);
    if let Some(w) = report.worst {
        println!("worst: {} [{}] analytic {:.6e} numeric {:.6e}", w.param, w.index, w.analytic, w.numeric);
    }
    Ok(())
}
