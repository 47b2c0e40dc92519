//! Train a small IQAE on synthetic contour melodies, writing the log and
//! best checkpoint, then evaluate it.
//!
//!     cargo run --release --example train_synthetic -- [out-dir] [steps]

use piano_genie::model::ModelConfig;
use piano_genie::nn::AdamConfig;
use piano_genie::train::{
    eval_cvr, eval_gold, eval_ppl, report, synthetic_corpus, train, CvrMode, EvalReport, GoldMode, GoldSet, RunOutput,
    TrainRunConfig, BEST_CHECKPOINT,
};

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("genie-train-example"), Into::into);
    let steps = args.next().map_or(Ok(500), |s| s.parse())?;

    let corpus = synthetic_corpus(100, 96, 32, 5)?;
    let config = TrainRunConfig {
        max_steps: steps,
        batch_size: 16,
        eval_every_steps: 100,
        patience_evals: 5,
        window_n: 32,
        log_every_steps: 50,
        model: ModelConfig { hidden_size: 32, window_n: 32, ..ModelConfig::default() },
        optimizer: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..TrainRunConfig::default()
    };
    let mut run = RunOutput::create(&out)?;
    let outcome = train(&config, &corpus.train, &corpus.validation, Some(&mut run))?;
    println!("{:?} after {} steps; checkpoint {}", outcome.stop, outcome.steps_run, out.join(BEST_CHECKPOINT).display());

    let model = &outcome.best;
    let row = EvalReport {
        name: "IQAE + contour".into(),
        step: Some(outcome.best_step),
        ppl: eval_ppl(model, &corpus.test, 64)?,
        cvr: Some(eval_cvr(model, &corpus.test, CvrMode::Literal)?),
        gold_mse: Some(eval_gold(model, &GoldSet::builtin().melodies, GoldMode::Quantized)?),
    };
    print!("{}", report(&[row]));
    Ok(())
}
