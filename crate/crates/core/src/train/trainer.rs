use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::config::TrainRunConfig;
use super::eval::mean_recons;
use super::TrainError;
use crate::data::{read_shard, shard_file, Split, TrainingExample};
use crate::model::{save_checkpoint, Batch, GenieModel, LossValues, QuantizeMode};
use crate::nn::{adam_update, clip_global_norm, AdamState, NnError, Tape};

pub const BEST_CHECKPOINT: &str = "best.pgck";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: LossValues,
    pub grad_norm: f64,
    pub val_recons: Option<f64>,
    pub val_ppl: Option<f64>,
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    EarlyStopping,
    TargetReached,
}

pub struct TrainOutcome {
    /// Weights with the lowest validation reconstruction loss (or the final
    /// weights when no evaluation ran).
    pub best: GenieModel<f32>,
    pub best_step: u64,
    pub best_val_recons: Option<f64>,
    pub steps_run: u64,
    pub stop: StopReason,
    pub log: Vec<LogRecord>,
}

/// Where a run writes its log and best checkpoint.
pub struct RunOutput {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self, TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let path = dir.join(TRAIN_LOG);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| TrainError::io(&path, e))?;
        Ok(Self { dir: dir.to_path_buf(), log: BufWriter::new(file) })
    }

    fn append(&mut self, record: &LogRecord) -> Result<(), TrainError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.log, "{line}")
            .and_then(|_| self.log.flush())
            .map_err(|e| TrainError::io(self.dir.join(TRAIN_LOG), e))
    }
}

fn pick_batch(examples: &[TrainingExample], size: usize, rng: &mut ChaCha8Rng) -> Vec<TrainingExample> {
    if size >= examples.len() {
        return examples.to_vec();
    }
    sample(rng, examples.len(), size).into_iter().map(|i| examples[i].clone()).collect()
}

/// Runs the optimization loop: sample a batch, forward, backward, clip,
/// Adam step. Every `eval_every_steps` the validation reconstruction loss is
/// measured, the best weights kept, and the run stops after
/// `patience_evals` evaluations without improvement.
pub fn train(
    config: &TrainRunConfig,
    train_set: &[TrainingExample],
    validation: &[TrainingExample],
    mut output: Option<&mut RunOutput>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyData("train"));
    }
    if validation.is_empty() {
        return Err(TrainError::EmptyData("validation"));
    }
    if let Some(bad) = train_set.iter().chain(validation).find(|e| e.len() != config.window_n) {
        return Err(TrainError::Config(format!(
            "window length {} does not match window_n {}",
            bad.len(),
            config.window_n
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = GenieModel::<f32>::init(config.model.clone(), &mut rng)?;
    let mut adam = AdamState::new(config.optimizer, &model.params);
    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_val: Option<f64> = None;
    let mut stale_evals = 0;
    let mut log = Vec::new();
    let mut stop = StopReason::MaxSteps;
    let mut step = 0;

    while step < config.max_steps {
        step += 1;
        let batch = Batch::new(&pick_batch(train_set, config.batch_size, &mut rng))?;
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard)?;
        let loss = pass.values(&tape);
        if !loss.total.is_finite() {
            return Err(TrainError::Divergence { step, detail: format!("loss is {:?}", loss) });
        }
        tape.backward(pass.total)?;
        let mut grads = tape.param_grads(&model.params);
        let grad_norm = f64::from(clip_global_norm(&mut grads, config.clip_norm as f32));
        adam_update(&mut model.params, &grads, &mut adam).map_err(|e| match e {
            NnError::Divergence(name) => TrainError::Divergence { step, detail: format!("non-finite gradient in `{name}`") },
            other => other.into(),
        })?;

        let mut record = LogRecord { step, loss, grad_norm, val_recons: None, val_ppl: None, best: false };
        let target_hit = config.target_train_ppl.is_some_and(|t| loss.recons.exp() < t);
        if step % config.eval_every_steps == 0 || step == config.max_steps || target_hit {
            let val = mean_recons(&model, validation, config.batch_size)?;
            record.val_recons = Some(val);
            record.val_ppl = Some(val.exp());
            if best_val.is_none_or(|b| val < b) {
                best_val = Some(val);
                best = model.clone();
                best_step = step;
                stale_evals = 0;
                record.best = true;
                if let Some(out) = output.as_deref_mut() {
                    save_checkpoint(&out.dir.join(BEST_CHECKPOINT), &best, Some(step))?;
                }
            } else {
                stale_evals += 1;
            }
            info!(step, train_recons = loss.recons, val_recons = val, best = record.best, "eval");
        }
        if record.val_recons.is_some() || step % config.log_every_steps == 0 {
            if let Some(out) = output.as_deref_mut() {
                out.append(&record)?;
            }
            log.push(record);
        }
        if target_hit {
            stop = StopReason::TargetReached;
            break;
        }
        if stale_evals >= config.patience_evals {
            stop = StopReason::EarlyStopping;
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        best_step,
        best_val_recons: best_val,
        steps_run: step,
        stop,
        log,
    })
}

/// Reads `train.pgsd` and `validation.pgsd` from `data` and trains,
/// writing the log and best checkpoint under `out`.
pub fn train_from_shards(config: &TrainRunConfig, data: &Path, out: &Path) -> Result<TrainOutcome, TrainError> {
    let load = |split: Split| -> Result<Vec<TrainingExample>, TrainError> {
        let (n, examples) = read_shard(data.join(shard_file(split)))?;
        if n != config.window_n {
            return Err(TrainError::Config(format!("{split} shard has window {n}, config says {}", config.window_n)));
        }
        Ok(examples)
    };
    let train_set = load(Split::Train)?;
    let validation = load(Split::Validation)?;
    let mut output = RunOutput::create(out)?;
    std::fs::write(out.join("config.toml"), config.to_toml()).map_err(|e| TrainError::io(out.join("config.toml"), e))?;
    train(config, &train_set, &validation, Some(&mut output))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{contour_fragments, window_at};
    use crate::model::{load_checkpoint, ModelConfig};

    fn corpus(n: usize, pieces: usize, seed: u64) -> Vec<TrainingExample> {
        contour_fragments(pieces, n * 2, seed)
            .iter()
            .flat_map(|s| [window_at(s, 0, n, 0).unwrap(), window_at(s, n, n, 0).unwrap()])
            .collect()
    }

    fn small_config() -> TrainRunConfig {
        TrainRunConfig {
            max_steps: 12,
            batch_size: 4,
            eval_every_steps: 4,
            patience_evals: 10,
            window_n: 8,
            log_every_steps: 1,
            model: ModelConfig { hidden_size: 8, window_n: 8, ..ModelConfig::default() },
            ..TrainRunConfig::default()
        }
    }

    #[test]
    fn same_seed_same_curve() {
        let data = corpus(8, 6, 1);
        let config = small_config();
        let a = train(&config, &data, &data[..2], None).unwrap();
        let b = train(&config, &data, &data[..2], None).unwrap();
        let bits = |o: &TrainOutcome| o.log.iter().map(|r| r.loss.total.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.log.len(), 12);
        assert!(a.log.iter().all(|r| r.loss.margin.is_some()));
    }

    #[test]
    fn loss_decreases_on_tiny_corpus() {
        let data = corpus(8, 2, 2);
        let config = TrainRunConfig {
            max_steps: 150,
            optimizer: crate::nn::AdamConfig { lr: 1e-2, ..Default::default() },
            ..small_config()
        };
        let out = train(&config, &data, &data, None).unwrap();
        let first = out.log.first().unwrap().loss.recons;
        let last = out.log.last().unwrap().loss.recons;
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn stops_early_when_validation_stalls() {
        let data = corpus(8, 4, 3);
        // lr 0 never changes the weights, so validation never improves
        let config = TrainRunConfig {
            max_steps: 1000,
            eval_every_steps: 2,
            patience_evals: 3,
            optimizer: crate::nn::AdamConfig { lr: 1e-30, ..Default::default() },
            ..small_config()
        };
        let out = train(&config, &data, &data, None).unwrap();
        assert_eq!(out.stop, StopReason::EarlyStopping);
        assert_eq!(out.steps_run, 8);
        assert_eq!(out.best_step, 2);
    }

    #[test]
    fn writes_log_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data = corpus(8, 3, 4);
        let mut output = RunOutput::create(dir.path()).unwrap();
        let out = train(&small_config(), &data, &data[..2], Some(&mut output)).unwrap();
        drop(output);
        let text = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
        let records: Vec<LogRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records, out.log);
        let (header, model) = load_checkpoint(&dir.path().join(BEST_CHECKPOINT)).unwrap();
        assert_eq!(header.step, Some(out.best_step));
        assert_eq!(model.params.values(), out.best.params.values());
    }

    #[test]
    fn rejects_empty_and_mismatched_data() {
        let data = corpus(8, 2, 5);
        assert!(matches!(train(&small_config(), &[], &data, None), Err(TrainError::EmptyData("train"))));
        assert!(matches!(train(&small_config(), &data, &[], None), Err(TrainError::EmptyData("validation"))));
        let short = vec![TrainingExample::from_keys(&[1, 2, 3], 0)];
        assert!(train(&small_config(), &short, &short, None).is_err());
    }
}
