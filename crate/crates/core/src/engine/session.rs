use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::sampling::{sample_key, tempered_probs};
use super::EngineError;
use crate::data::{dt_bucket, FIRST_NOTE_DT_BUCKET, NUM_DT_BUCKETS};
use crate::model::{centroid, GenieModel, ModelConfig, QuantizerKind, START_SYMBOL};
use crate::nn::{lstm_step, LstmLayerParams, LstmState};

pub const NUM_BUTTONS: usize = 8;
pub const DEFAULT_TEMPERATURE: f64 = 0.25;

/// Decoder weights unpacked for single-step evaluation. Shared read-only
/// between sessions.
#[derive(Debug)]
pub struct DecoderWeights {
    pub config: ModelConfig,
    layers: Vec<LstmLayerParams<f32>>,
    head_w: Array2<f32>,
    head_b: Array1<f32>,
    /// Button representation fed to the decoder, one row per button.
    button_repr: Array2<f32>,
}

impl DecoderWeights {
    pub fn from_model(model: &GenieModel<f32>) -> Result<Arc<Self>, EngineError> {
        let config = model.config.clone();
        let missing = |name: &str| EngineError::Checkpoint(format!("missing decoder parameter `{name}`"));
        let layers = (0..config.num_layers)
            .map(|l| LstmLayerParams::from_store(&model.params, &format!("dec.l{l}")).ok_or_else(|| missing(&format!("dec.l{l}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let head_w = model.params.by_name("dec.head.w").ok_or_else(|| missing("dec.head.w"))?.clone();
        let head_b = model.params.by_name("dec.head.b").ok_or_else(|| missing("dec.head.b"))?.row(0).to_owned();
        let button_repr = match config.quantizer {
            QuantizerKind::Iqae => Array2::from_shape_fn((NUM_BUTTONS, 1), |(b, _)| centroid(b)),
            QuantizerKind::Vq => model.params.by_name("vq.codebook").ok_or_else(|| missing("vq.codebook"))?.clone(),
            QuantizerKind::None => Array2::zeros((NUM_BUTTONS, 0)),
        };
        if layers.first().map(|l| l.input_size()) != Some(config.decoder_input_size()) {
            return Err(EngineError::Checkpoint("decoder input width does not match config".into()));
        }
        Ok(Arc::new(Self { config, layers, head_w, head_b, button_repr }))
    }

    fn input(&self, prev_key: usize, button: usize, dt: Option<u8>) -> Array1<f32> {
        let mut x = Array1::zeros(self.config.decoder_input_size());
        x[prev_key] = 1.0;
        let repr = self.button_repr.row(button);
        let off = START_SYMBOL + 1;
        x.slice_mut(ndarray::s![off..off + repr.len()]).assign(&repr);
        if let Some(d) = dt {
            x[off + repr.len() + d as usize] = 1.0;
        }
        x
    }

    /// One decoder step from `state`, returning new state and logits.
    fn step(&self, state: &[LstmState<f32>], prev_key: usize, button: usize, dt: Option<u8>) -> (Vec<LstmState<f32>>, Array1<f32>) {
        let mut x = self.input(prev_key, button, dt);
        let mut next = Vec::with_capacity(state.len());
        for (layer, s) in self.layers.iter().zip(state) {
            let (h, c) = lstm_step(layer, x.view(), s.h.view(), s.c.view()).expect("shapes checked at load");
            x = h.clone();
            next.push(LstmState { h, c });
        }
        let logits = self.head_w.dot(&x) + &self.head_b;
        (next, logits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteKind {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub kind: NoteKind,
    pub key: u8,
    pub button: u8,
    /// Seconds on the caller's clock.
    pub time: f64,
}

/// Live decoder state for one performer.
#[derive(Clone, Debug)]
pub struct DecoderSession {
    weights: Arc<DecoderWeights>,
    state: Vec<LstmState<f32>>,
    prev_key: usize,
    last_event_time: Option<f64>,
    held: BTreeMap<u8, u8>,
    rng: ChaCha8Rng,
    temperature: f64,
}

fn check_temperature(t: f64) -> Result<(), EngineError> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(EngineError::InvalidTemperature(t))
    }
}

impl DecoderSession {
    pub fn new(weights: Arc<DecoderWeights>, temperature: f64, seed: u64) -> Result<Self, EngineError> {
        check_temperature(temperature)?;
        let hidden = weights.config.hidden_size;
        Ok(Self {
            state: vec![LstmState::zeros(hidden); weights.layers.len()],
            weights,
            prev_key: START_SYMBOL,
            last_event_time: None,
            held: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            temperature,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.weights.config
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<(), EngineError> {
        check_temperature(t)?;
        self.temperature = t;
        Ok(())
    }

    /// Key sounding for each held button.
    pub fn held(&self) -> &BTreeMap<u8, u8> {
        &self.held
    }

    pub fn prev_key(&self) -> usize {
        self.prev_key
    }

    fn check_button(button: u8) -> Result<(), EngineError> {
        if (button as usize) < NUM_BUTTONS {
            Ok(())
        } else {
            Err(EngineError::InvalidButton(button))
        }
    }

    /// Runs one decoder step for `button` and samples a key. A re-press of a
    /// held button first releases its old key, so the result is `[off, on]`
    /// in that case and `[on]` otherwise.
    pub fn press(&mut self, button: u8, wall_time: f64) -> Result<Vec<NoteEvent>, EngineError> {
        Self::check_button(button)?;
        let mut time = wall_time;
        if let Some(last) = self.last_event_time {
            if !(time >= last) {
                warn!(wall_time, last, "non-monotonic press time, clamping");
                time = last;
            }
        }
        let dt = match (self.weights.config.use_dt, self.last_event_time) {
            (false, _) => None,
            (true, None) => Some(FIRST_NOTE_DT_BUCKET),
            (true, Some(last)) => Some(dt_bucket(time - last).unwrap_or(NUM_DT_BUCKETS as u8 - 1)),
        };

        let mut events = Vec::with_capacity(2);
        if let Some(old) = self.held.remove(&button) {
            events.push(NoteEvent { kind: NoteKind::Off, key: old, button, time });
        }
        let (state, logits) = self.weights.step(&self.state, self.prev_key, button as usize, dt);
        let key = sample_key(logits.view(), self.temperature, &mut self.rng) as u8;
        self.state = state;
        self.prev_key = key as usize;
        self.last_event_time = Some(time);
        self.held.insert(button, key);
        events.push(NoteEvent { kind: NoteKind::On, key, button, time });
        Ok(events)
    }

    /// Off-event for the key `button` is holding; stale releases yield nothing.
    pub fn release(&mut self, button: u8, wall_time: f64) -> Result<Option<NoteEvent>, EngineError> {
        Self::check_button(button)?;
        Ok(self.held.remove(&button).map(|key| NoteEvent { kind: NoteKind::Off, key, button, time: wall_time }))
    }

    /// Distribution over keys at temperature 1 for every button, computed
    /// from copies of the current state. Not available for ΔT models.
    pub fn lookahead(&self) -> Result<Array2<f64>, EngineError> {
        if self.weights.config.use_dt {
            return Err(EngineError::LookaheadUnsupported);
        }
        let vocab = self.weights.config.vocab;
        let mut out = Array2::zeros((NUM_BUTTONS, vocab));
        for b in 0..NUM_BUTTONS {
            let (_, logits) = self.weights.step(&self.state, self.prev_key, b, None);
            out.row_mut(b).assign(&tempered_probs(logits.view(), 1.0));
        }
        Ok(out)
    }

    /// Zeroes the recurrent state and releases every held note. The RNG
    /// stream continues where it was.
    pub fn reset(&mut self) -> Vec<NoteEvent> {
        let time = self.last_event_time.unwrap_or(0.0);
        let events = std::mem::take(&mut self.held)
            .into_iter()
            .map(|(button, key)| NoteEvent { kind: NoteKind::Off, key, button, time })
            .collect();
        for s in &mut self.state {
            s.h.fill(0.0);
            s.c.fill(0.0);
        }
        self.prev_key = START_SYMBOL;
        self.last_event_time = None;
        events
    }

    /// Releases everything at teardown.
    pub fn release_all(&mut self, wall_time: f64) -> Vec<NoteEvent> {
        std::mem::take(&mut self.held)
            .into_iter()
            .map(|(button, key)| NoteEvent { kind: NoteKind::Off, key, button, time: wall_time })
            .collect()
    }
}
