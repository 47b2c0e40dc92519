use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracing::info;

use super::config::TrainRunConfig;
use super::eval::{eval_cvr, eval_gold, eval_ppl, CvrMode, GoldMelody, GoldMode};
use super::report::EvalReport;
use super::trainer::train;
use super::TrainError;
use crate::data::{contour_fragments, sample_window, split_corpus, window_at, TrainingExample};
use crate::model::{GenieModel, ModelConfig, QuantizerKind};
use crate::nn::AdamConfig;

/// Settings for a small side-by-side comparison on synthetic melodies.
#[derive(Clone, Debug)]
pub struct DeskScale {
    pub pieces: usize,
    pub piece_len: usize,
    pub window_n: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for DeskScale {
    fn default() -> Self {
        Self {
            pieces: 200,
            piece_len: 96,
            window_n: 32,
            hidden_size: 64,
            num_layers: 2,
            steps: 2000,
            batch_size: 16,
            lr: 3e-3,
            eval_every: 250,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: Vec<TrainingExample>,
    pub validation: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
}

/// Contour-fragment melodies split 8:1:1 by piece. Training gets every
/// tiled window plus randomly placed, transposed ones; validation and test
/// are tiled without transposition.
pub fn synthetic_corpus(pieces: usize, piece_len: usize, n: usize, seed: u64) -> Result<SyntheticCorpus, TrainError> {
    let seqs = contour_fragments(pieces, piece_len, seed);
    let ids: Vec<&str> = seqs.iter().map(|s| s.source_id.as_str()).collect();
    let split = split_corpus(&ids, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiled = |s| (0..piece_len / n).map(move |k| window_at(s, k * n, n, 0));
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in &seqs {
        if split.train.contains(&s.source_id) {
            for w in tiled(s) {
                train.push(w?);
            }
            for _ in 0..piece_len / n {
                train.push(sample_window(s, n, &mut rng)?);
            }
        } else if split.validation.contains(&s.source_id) {
            validation.extend(tiled(s).collect::<Result<Vec<_>, _>>()?);
        } else {
            test.extend(tiled(s).collect::<Result<Vec<_>, _>>()?);
        }
    }
    Ok(SyntheticCorpus { train, validation, test })
}

#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

/// The four configurations compared: language model, VQ-VAE, and IQAE with
/// and without the contour term.
pub fn table_variants(base: &ModelConfig) -> Vec<Variant> {
    let with = |name: &str, quantizer, contour_weight, margin_weight| Variant {
        name: name.to_string(),
        model: ModelConfig { quantizer, contour_weight, margin_weight, ..base.clone() },
    };
    vec![
        with("LM", QuantizerKind::None, 0.0, 0.0),
        with("VQ-VAE", QuantizerKind::Vq, 0.0, 0.0),
        with("IQAE", QuantizerKind::Iqae, 0.0, 1.0),
        with("IQAE + contour", QuantizerKind::Iqae, 1.0, 1.0),
    ]
}

pub struct Compared {
    pub report: EvalReport,
    pub model: GenieModel<f32>,
}

/// Trains each variant on the same corpus with the same budget and
/// evaluates PPL and CVR on the test split and Gold MSE on `gold`.
pub fn compare(desk: &DeskScale, variants: &[Variant], corpus: &SyntheticCorpus, gold: &[GoldMelody]) -> Result<Vec<Compared>, TrainError> {
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        let config = TrainRunConfig {
            max_steps: desk.steps,
            batch_size: desk.batch_size,
            eval_every_steps: desk.eval_every,
            patience_evals: u32::MAX,
            seed: desk.seed,
            window_n: desk.window_n,
            log_every_steps: desk.eval_every,
            model: ModelConfig {
                hidden_size: desk.hidden_size,
                num_layers: desk.num_layers,
                window_n: desk.window_n,
                ..v.model.clone()
            },
            optimizer: AdamConfig { lr: desk.lr, ..AdamConfig::default() },
            ..TrainRunConfig::default()
        };
        let outcome = train(&config, &corpus.train, &corpus.validation, None)?;
        let model = outcome.best;
        let encoder = model.config.has_encoder();
        let report = EvalReport {
            name: v.name.clone(),
            step: Some(outcome.best_step),
            ppl: eval_ppl(&model, &corpus.test, 64)?,
            cvr: encoder.then(|| eval_cvr(&model, &corpus.test, CvrMode::Literal)).transpose()?,
            gold_mse: encoder.then(|| eval_gold(&model, gold, GoldMode::Quantized)).transpose()?,
        };
        info!(name = %v.name, ppl = report.ppl, cvr = ?report.cvr, gold = ?report.gold_mse, "variant done");
        out.push(Compared { report, model });
    }
    Ok(out)
}
