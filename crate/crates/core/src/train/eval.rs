use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::TrainError;
use crate::data::{dt_bucket, TrainingExample, FIRST_NOTE_DT_BUCKET};
use crate::model::{Batch, GenieModel, QuantizeMode, QuantizerKind};
use crate::nn::{Scalar, Tape};

/// Teacher-forced mean per-token NLL over every window, in chunks of
/// `batch_size`. The encoder sees the full window.
pub fn mean_recons<F: Scalar>(model: &GenieModel<F>, examples: &[TrainingExample], batch_size: usize) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyData("evaluation"));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = Batch::new(chunk)?;
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard)?;
        total += tape.scalar(pass.recons).as_f64() * batch.rows() as f64;
        tokens += batch.rows();
    }
    Ok(total / tokens as f64)
}

/// `exp(mean per-token NLL)`.
pub fn eval_ppl<F: Scalar>(model: &GenieModel<F>, examples: &[TrainingExample], batch_size: usize) -> Result<f64, TrainError> {
    Ok(mean_recons(model, examples, batch_size)?.exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvrMode {
    /// Violation whenever the three-valued signs differ.
    #[default]
    Literal,
    /// Violation only when the signs are strictly opposed (+/− or −/+).
    Strict,
}

/// `(violations, transitions)` for one sequence.
pub fn contour_violations(keys: &[u8], buttons: &[usize], mode: CvrMode) -> (usize, usize) {
    let sign = |a: i64, b: i64| (b - a).signum();
    let mut violations = 0;
    let transitions = keys.len().min(buttons.len()).saturating_sub(1);
    for t in 1..=transitions {
        let dk = sign(keys[t - 1].into(), keys[t].into());
        let db = sign(buttons[t - 1] as i64, buttons[t] as i64);
        let violated = match mode {
            CvrMode::Literal => dk != db,
            CvrMode::Strict => dk * db < 0,
        };
        violations += usize::from(violated);
    }
    (violations, transitions)
}

/// Contour violation ratio of the model's quantized buttons over all windows.
pub fn eval_cvr<F: Scalar>(model: &GenieModel<F>, examples: &[TrainingExample], mode: CvrMode) -> Result<f64, TrainError> {
    if !model.config.has_encoder() {
        return Err(TrainError::NoEncoder);
    }
    if examples.is_empty() {
        return Err(TrainError::EmptyData("evaluation"));
    }
    let (mut violations, mut transitions) = (0, 0);
    for chunk in examples.chunks(32) {
        let (_, buttons) = model.encode_batch(&Batch::new(chunk)?)?;
        for (example, b) in chunk.iter().zip(&buttons) {
            let (v, t) = contour_violations(&example.keys, b, mode);
            violations += v;
            transitions += t;
        }
    }
    Ok(if transitions == 0 { 0.0 } else { violations as f64 / transitions as f64 })
}

/// A known melody with reference buttons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldMelody {
    pub name: String,
    pub keys: Vec<u8>,
    pub gold_buttons: Vec<u8>,
    pub tempo_bpm: f64,
    /// Notated duration of each note in beats; quarter notes when absent.
    #[serde(default)]
    pub beats: Option<Vec<f64>>,
}

impl GoldMelody {
    /// ΔT buckets from the notated rhythm at `tempo_bpm`.
    pub fn dt_buckets(&self) -> Result<Vec<u8>, TrainError> {
        let beat_seconds = 60.0 / self.tempo_bpm;
        let mut out = Vec::with_capacity(self.keys.len());
        for t in 0..self.keys.len() {
            if t == 0 {
                out.push(FIRST_NOTE_DT_BUCKET);
                continue;
            }
            let beats = self.beats.as_ref().map_or(1.0, |b| b[t - 1]);
            out.push(dt_bucket(beats * beat_seconds)?);
        }
        Ok(out)
    }

    fn check(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Gold(format!("{}: {m}", self.name)));
        if self.gold_buttons.len() != self.keys.len() {
            return bad("gold_buttons and keys differ in length".into());
        }
        if self.beats.as_ref().is_some_and(|b| b.len() != self.keys.len()) {
            return bad("beats and keys differ in length".into());
        }
        if self.keys.iter().any(|&k| k >= 88) || self.gold_buttons.iter().any(|&b| b >= 8) {
            return bad("key or button out of range".into());
        }
        if !(self.tempo_bpm > 0.0) {
            return bad("tempo_bpm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldSet {
    #[serde(rename = "melody")]
    pub melodies: Vec<GoldMelody>,
}

impl GoldSet {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let set: Self = toml::from_str(text).map_err(|e| TrainError::Gold(e.to_string()))?;
        set.melodies.iter().try_for_each(GoldMelody::check)?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?)
    }

    /// The fixture set shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(include_str!("../../fixtures/gold_melodies.toml")).expect("bundled fixtures are valid")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldMode {
    /// Compare quantized button indices.
    #[default]
    Quantized,
    /// Compare the raw encoder scalar mapped onto the button axis,
    /// `(enc + 1)·3.5`. IQAE only.
    Raw,
}

/// Mean squared error in button space between the encoder's output and the
/// gold buttons, averaged over every note of every melody. Melodies shorter
/// than two notes are skipped.
pub fn eval_gold<F: Scalar>(model: &GenieModel<F>, melodies: &[GoldMelody], mode: GoldMode) -> Result<f64, TrainError> {
    if !model.config.has_encoder() {
        return Err(TrainError::NoEncoder);
    }
    if mode == GoldMode::Raw && model.config.quantizer != QuantizerKind::Iqae {
        return Err(TrainError::Gold("raw gold mode needs a scalar encoder".into()));
    }
    let (mut sq, mut notes) = (0.0, 0usize);
    for melody in melodies {
        melody.check()?;
        if melody.keys.len() < 2 {
            warn!(melody = %melody.name, "skipping gold melody shorter than two notes");
            continue;
        }
        let example = TrainingExample {
            keys: melody.keys.clone(),
            dt_buckets: if model.config.use_dt { melody.dt_buckets()? } else { vec![0; melody.keys.len()] },
            transpose: 0,
        };
        let (raw, buttons) = model.encode_batch(&Batch::new(&[example])?)?;
        for t in 0..melody.keys.len() {
            let predicted = match mode {
                GoldMode::Quantized => buttons[0][t] as f64,
                GoldMode::Raw => (raw[0][t][0].as_f64() + 1.0) * 3.5,
            };
            let err = predicted - f64::from(melody.gold_buttons[t]);
            sq += err * err;
            notes += 1;
        }
    }
    if notes == 0 {
        return Err(TrainError::Gold("no gold melody with at least two notes".into()));
    }
    Ok(sq / notes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn cvr_examples() {
        let literal = |k: &[u8], b: &[usize]| contour_violations(k, b, CvrMode::Literal);
        assert_eq!(literal(&[1, 2, 3, 4], &[0, 1, 2, 3]), (0, 3));
        assert_eq!(literal(&[39, 41], &[5, 3]), (1, 1));
        assert_eq!(literal(&[39, 41, 39, 41], &[2, 3, 3, 4]), (1, 3));
        assert_eq!(contour_violations(&[39, 41, 39, 41], &[2, 3, 3, 4], CvrMode::Strict), (0, 3));
        assert_eq!(literal(&[5], &[1]), (0, 0));
    }

    fn biased_model(quantizer: QuantizerKind, bias: f32) -> GenieModel<f32> {
        let config = ModelConfig { hidden_size: 4, quantizer, ..ModelConfig::default() };
        let mut m = GenieModel::<f32>::zeros(config).unwrap();
        if let Some(id) = m.params.id("enc.head.b") {
            m.params.get_mut(id).fill(bias);
        }
        m
    }

    #[test]
    fn zero_logit_model_has_ppl_88() {
        let m = biased_model(QuantizerKind::None, 0.0);
        let ex = vec![TrainingExample::from_keys(&[3, 9, 27, 50], 2); 3];
        assert!((eval_ppl(&m, &ex, 2).unwrap() - 88.0).abs() < 1e-3);
        assert!(matches!(eval_cvr(&m, &ex, CvrMode::Literal), Err(TrainError::NoEncoder)));
    }

    #[test]
    fn gold_mse_examples() {
        // constant encoder at centroid 3 → every button is 3
        let m = biased_model(QuantizerKind::Iqae, crate::model::centroid::<f32>(3));
        let melody = |gold: Vec<u8>| GoldMelody {
            name: "m".into(),
            keys: vec![39, 41, 43],
            gold_buttons: gold,
            tempo_bpm: 100.0,
            beats: None,
        };
        assert_eq!(eval_gold(&m, &[melody(vec![3, 3, 3])], GoldMode::Quantized).unwrap(), 0.0);
        assert_eq!(eval_gold(&m, &[melody(vec![4, 4, 4])], GoldMode::Quantized).unwrap(), 1.0);
        assert_eq!(eval_gold(&m, &[melody(vec![2, 4, 2])], GoldMode::Quantized).unwrap(), 1.0);
        let raw = eval_gold(&m, &[melody(vec![3, 3, 3])], GoldMode::Raw).unwrap();
        assert!(raw < 1e-10, "{raw}");
        let single = GoldMelody { keys: vec![39], gold_buttons: vec![0], ..melody(vec![]) };
        assert_eq!(eval_gold(&m, &[single, melody(vec![4, 4, 4])], GoldMode::Quantized).unwrap(), 1.0);
        assert!(eval_gold(&m, &[melody(vec![1])], GoldMode::Quantized).is_err());
    }

    #[test]
    fn gold_dt_at_tempo() {
        let m = GoldMelody {
            name: "r".into(),
            keys: vec![1, 2, 3],
            gold_buttons: vec![0, 1, 2],
            tempo_bpm: 100.0,
            beats: Some(vec![0.5, 1.0, 2.0]),
        };
        // 0.5 beat at 100 BPM = 0.3 s → bucket 9; 1 beat = 0.6 s → 19
        assert_eq!(m.dt_buckets().unwrap(), vec![31, 9, 19]);
    }

    #[test]
    fn builtin_fixtures() {
        let set = GoldSet::builtin();
        assert!(set.melodies.len() >= 8);
        assert!(set.melodies.iter().any(|m| m.name.contains("Jacques")));
        for m in &set.melodies {
            assert!(m.keys.len() >= 2);
            assert_eq!(m.tempo_bpm, 100.0);
            assert!(m.dt_buckets().is_ok());
        }
    }
}
