//! Memorize two short melodies with the full 2×128 IQAE and report training
//! perplexity and reconstruction accuracy.
//!
//!     cargo run --release --example overfit

use piano_genie::data::{two_melodies, window_at};
use piano_genie::model::{Batch, ModelConfig, QuantizeMode};
use piano_genie::nn::{AdamConfig, Tape};
use piano_genie::train::{train, TrainRunConfig};

fn main() -> anyhow::Result<()> {
    let windows: Vec<_> = two_melodies().iter().map(|s| window_at(s, 0, 64, 0)).collect::<Result<_, _>>()?;
    let config = TrainRunConfig {
        max_steps: 5000,
        batch_size: 2,
        eval_every_steps: 100,
        patience_evals: 50,
        window_n: 64,
        log_every_steps: 50,
        target_train_ppl: Some(1.05),
        model: ModelConfig { window_n: 64, ..ModelConfig::default() },
        optimizer: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..TrainRunConfig::default()
    };
    let start = std::time::Instant::now();
    let outcome = train(&config, &windows, &windows, None)?;
    let last = outcome.log.last().expect("at least one record");
    println!(
        "steps {} ({:?}), train PPL {:.4}, {:.1} ms/step",
        outcome.steps_run,
        outcome.stop,
        last.loss.recons.exp(),
        start.elapsed().as_secs_f64() * 1e3 / outcome.steps_run as f64
    );

    let batch = Batch::new(&windows)?;
    let mut tape = Tape::new();
    let pass = outcome.best.forward(&mut tape, &batch, QuantizeMode::Hard)?;
    let logits = tape.value(pass.logits);
    let targets = batch.targets();
    let correct = logits
        .rows()
        .into_iter()
        .zip(&targets)
        .filter(|(row, &t)| row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i) == Some(t))
        .count();
    println!("reconstruction accuracy {:.2}%", 100.0 * correct as f64 / targets.len() as f64);
    Ok(())
}
