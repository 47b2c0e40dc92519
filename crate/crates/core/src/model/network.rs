use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::config::{ModelConfig, QuantizerKind};
use super::quantize::{centroid, iqae_button, nearest_codeword, VqCodebook};
use super::ModelError;
use crate::data::{TrainingExample, NUM_KEYS};
use crate::nn::{lstm_sequence, LstmLayerParams, NnError, ParamStore, Scalar, Tape, Var};

/// Previous-key index fed to the decoder at the first step.
pub const START_SYMBOL: usize = NUM_KEYS;

/// Equal-length windows laid out time-major: row `t·B + b` is step `t` of
/// example `b`.
#[derive(Clone, Debug)]
pub struct Batch {
    keys: Vec<Vec<u8>>,
    dt: Vec<Vec<u8>>,
    steps: usize,
}

impl Batch {
    pub fn new(examples: &[TrainingExample]) -> Result<Self, ModelError> {
        let steps = examples.first().map(|e| e.len()).unwrap_or(0);
        if steps == 0 {
            return Err(ModelError::Config("batch needs at least one non-empty example".into()));
        }
        if examples.iter().any(|e| e.keys.len() != steps || e.dt_buckets.len() != steps) {
            return Err(ModelError::Config("batch examples must share one length".into()));
        }
        Ok(Self {
            keys: examples.iter().map(|e| e.keys.clone()).collect(),
            dt: examples.iter().map(|e| e.dt_buckets.clone()).collect(),
            steps,
        })
    }

    pub fn size(&self) -> usize {
        self.keys.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rows(&self) -> usize {
        self.steps * self.size()
    }

    pub fn key(&self, t: usize, b: usize) -> u8 {
        self.keys[b][t]
    }

    pub fn dt(&self, t: usize, b: usize) -> u8 {
        self.dt[b][t]
    }

    /// Targets in row order.
    pub fn targets(&self) -> Vec<usize> {
        (0..self.rows()).map(|r| self.key(r / self.size(), r % self.size()) as usize).collect()
    }

    /// `keys[t] − keys[t−1]` in row order (0 for the first step).
    pub fn intervals<F: Scalar>(&self) -> Vec<F> {
        let b = self.size();
        (0..self.rows())
            .map(|r| {
                let (t, i) = (r / b, r % b);
                if t == 0 {
                    F::zero()
                } else {
                    F::lit(f64::from(self.key(t, i)) - f64::from(self.key(t - 1, i)))
                }
            })
            .collect()
    }
}

/// Dense `[rows × width]` matrix with up to one hot column per row, filled
/// by `hot(row)`.
pub fn one_hot_rows<F: Scalar>(rows: usize, width: usize, hot: impl Fn(usize) -> Option<usize>) -> Array2<F> {
    let mut out = Array2::zeros((rows, width));
    for r in 0..rows {
        if let Some(c) = hot(r) {
            out[[r, c]] = F::one();
        }
    }
    out
}

/// Quantizer decisions captured from one forward pass.
#[derive(Clone, Debug)]
pub struct FrozenQuantization<F> {
    /// Encoder output the decisions were made at.
    pub anchor: Array2<F>,
    /// Quantized representation handed to the decoder.
    pub value: Array2<F>,
    /// Button (IQAE) or codeword (VQ) index per row.
    pub indices: Vec<usize>,
}

/// How the quantizer behaves on the tape.
#[derive(Clone, Copy, Debug)]
pub enum QuantizeMode<'a, F> {
    /// Snap to the nearest centroid/codeword, straight-through gradient.
    Hard,
    /// Replay earlier decisions as the smooth map `value + (z − anchor)`.
    /// Its Jacobian is the identity and its value at the anchor matches
    /// `Hard` exactly, so it is a differentiable surrogate for gradient checks.
    Frozen(&'a FrozenQuantization<F>),
}

#[derive(Clone, Debug)]
pub struct ForwardPass<F> {
    pub total: Var,
    pub recons: Var,
    pub margin: Option<Var>,
    pub contour: Option<Var>,
    pub codebook: Option<Var>,
    pub commitment: Option<Var>,
    /// Raw encoder output, `[rows × button_dim]`.
    pub enc: Option<Var>,
    /// Quantized representation consumed by the decoder.
    pub repr: Option<Var>,
    pub logits: Var,
    pub quantization: Option<FrozenQuantization<F>>,
}

/// Scalar loss components; absent terms are `None`, never zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub recons: f64,
    pub margin: Option<f64>,
    pub contour: Option<f64>,
    pub codebook: Option<f64>,
    pub commitment: Option<f64>,
}

impl<F: Scalar> ForwardPass<F> {
    pub fn values(&self, tape: &Tape<F>) -> LossValues {
        let get = |v: Option<Var>| v.map(|v| tape.scalar(v).as_f64());
        LossValues {
            total: tape.scalar(self.total).as_f64(),
            recons: tape.scalar(self.recons).as_f64(),
            margin: get(self.margin),
            contour: get(self.contour),
            codebook: get(self.codebook),
            commitment: get(self.commitment),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenieModel<F> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
}

enum Fill<'a, R> {
    Zeros,
    Random(&'a mut R),
}

fn enc_prefix(layer: usize, backward: bool) -> String {
    format!("enc.l{layer}.{}", if backward { "bw" } else { "fw" })
}

fn dec_prefix(layer: usize) -> String {
    format!("dec.l{layer}")
}

impl<F: Scalar> GenieModel<F> {
    /// LSTM weights uniform in `±1/√H` with forget bias 1, heads uniform in
    /// `±1/√fan_in` with zero bias, codebook uniform in `±1/k`.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        Self::build(config, Fill::Random(rng))
    }

    /// Every parameter exactly zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        Self::build::<rand::rngs::ThreadRng>(config, Fill::Zeros)
    }

    fn build<R: Rng>(config: ModelConfig, mut fill: Fill<'_, R>) -> Result<Self, ModelError> {
        config.validate()?;
        let h = config.hidden_size;
        let mut store = ParamStore::new();
        let lstm = |store: &mut ParamStore<F>, fill: &mut Fill<'_, R>, input: usize, prefix: &str| {
            let p = match fill {
                Fill::Zeros => LstmLayerParams::<F>::zeros(input, h),
                Fill::Random(rng) => LstmLayerParams::init(input, h, *rng),
            };
            p.register(store, prefix);
        };
        let dense = |store: &mut ParamStore<F>, fill: &mut Fill<'_, R>, name: &str, out: usize, inp: usize| {
            let w = match fill {
                Fill::Zeros => Array2::zeros((out, inp)),
                Fill::Random(rng) => {
                    let bound = 1.0 / (inp as f64).sqrt();
                    Array2::from_shape_fn((out, inp), |_| F::lit(rng.random_range(-bound..=bound)))
                }
            };
            store.insert(format!("{name}.w"), w);
            store.insert(format!("{name}.b"), Array2::zeros((1, out)));
        };

        if config.has_encoder() {
            for layer in 0..config.num_layers {
                let input = if layer == 0 { config.encoder_input_size() } else { 2 * h };
                for backward in [false, true] {
                    lstm(&mut store, &mut fill, input, &enc_prefix(layer, backward));
                }
            }
            dense(&mut store, &mut fill, "enc.head", config.button_dim(), 2 * h);
        }
        if config.quantizer == QuantizerKind::Vq {
            let codebook = match &mut fill {
                Fill::Zeros => Array2::zeros((config.k_buttons, config.vq_dim)),
                Fill::Random(rng) => VqCodebook::init(config.k_buttons, config.vq_dim, *rng).embeddings,
            };
            store.insert("vq.codebook", codebook);
        }
        for layer in 0..config.num_layers {
            let input = if layer == 0 { config.decoder_input_size() } else { h };
            lstm(&mut store, &mut fill, input, &dec_prefix(layer));
        }
        dense(&mut store, &mut fill, "dec.head", config.vocab, h);
        Ok(Self { config, params: store })
    }

    /// Wraps loaded parameters after checking names and shapes against the
    /// layout `config` implies.
    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self, ModelError> {
        let reference = Self::zeros(config.clone())?;
        if reference.params.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "config implies {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, value) in reference.params.iter() {
            let got = params
                .by_name(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
            if got.dim() != value.dim() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, config implies {:?}",
                    got.dim(),
                    value.dim()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn cast<G: Scalar>(&self) -> GenieModel<G> {
        GenieModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn param(&self, tape: &mut Tape<F>, name: &str) -> Result<Var, ModelError> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
        Ok(tape.param(&self.params, id))
    }

    fn lstm_layer(&self, tape: &mut Tape<F>, prefix: &str, input: Var, batch: usize, reverse: bool) -> Result<Var, ModelError> {
        let wx = self.param(tape, &format!("{prefix}.wx"))?;
        let wh = self.param(tape, &format!("{prefix}.wh"))?;
        let b = self.param(tape, &format!("{prefix}.b"))?;
        Ok(lstm_sequence(tape, wx, wh, b, input, batch, reverse)?)
    }

    fn head(&self, tape: &mut Tape<F>, name: &str, input: Var) -> Result<Var, ModelError> {
        let w = self.param(tape, &format!("{name}.w"))?;
        let b = self.param(tape, &format!("{name}.b"))?;
        let y = tape.matmul_t(input, w)?;
        Ok(tape.add_row(y, b)?)
    }

    fn dt_one_hot(&self, batch: &Batch) -> Array2<F> {
        let b = batch.size();
        one_hot_rows(batch.rows(), self.config.dt_features(), |r| Some(batch.dt(r / b, r % b) as usize))
    }

    /// Bidirectional encoder over one-hot keys (⊕ one-hot ΔT), returning the
    /// head output `[rows × button_dim]`.
    pub fn encode(&self, tape: &mut Tape<F>, batch: &Batch) -> Result<Var, ModelError> {
        if !self.config.has_encoder() {
            return Err(ModelError::Config("language model has no encoder".into()));
        }
        let b = batch.size();
        let keys = one_hot_rows(batch.rows(), self.config.vocab, |r| Some(batch.key(r / b, r % b) as usize));
        let features = if self.config.use_dt {
            ndarray::concatenate(ndarray::Axis(1), &[keys.view(), self.dt_one_hot(batch).view()]).expect("same rows")
        } else {
            keys
        };
        let mut input = tape.constant(features);
        for layer in 0..self.config.num_layers {
            let fw = self.lstm_layer(tape, &enc_prefix(layer, false), input, b, false)?;
            let bw = self.lstm_layer(tape, &enc_prefix(layer, true), input, b, true)?;
            input = tape.concat_cols(&[fw, bw])?;
        }
        self.head(tape, "enc.head", input)
    }

    /// Unidirectional decoder: previous key (start symbol at step 0) ⊕
    /// button representation ⊕ ΔT → logits `[rows × 88]`.
    pub fn decode(&self, tape: &mut Tape<F>, batch: &Batch, repr: Option<Var>) -> Result<Var, ModelError> {
        let b = batch.size();
        match (repr, self.config.button_dim()) {
            (None, 0) => {}
            (Some(r), d) if tape.value(r).dim() == (batch.rows(), d) => {}
            _ => {
                return Err(ModelError::Nn(NnError::Shape {
                    op: "decode",
                    expected: format!("button representation of width {}", self.config.button_dim()),
                    got: format!("{:?}", repr.map(|r| tape.value(r).dim())),
                }))
            }
        }
        let prev = one_hot_rows(batch.rows(), self.config.vocab + 1, |r| {
            let t = r / b;
            Some(if t == 0 { START_SYMBOL } else { batch.key(t - 1, r % b) as usize })
        });
        let mut parts = vec![tape.constant(prev)];
        parts.extend(repr);
        if self.config.use_dt {
            parts.push(tape.constant(self.dt_one_hot(batch)));
        }
        let mut input = tape.concat_cols(&parts)?;
        for layer in 0..self.config.num_layers {
            input = self.lstm_layer(tape, &dec_prefix(layer), input, b, false)?;
        }
        self.head(tape, "dec.head", input)
    }

    /// Full teacher-forced pass and loss:
    /// mean token NLL, plus per-step-averaged margin and contour penalties
    /// (IQAE) or codebook and β-weighted commitment terms (VQ).
    pub fn forward(&self, tape: &mut Tape<F>, batch: &Batch, mode: QuantizeMode<'_, F>) -> Result<ForwardPass<F>, ModelError> {
        let cfg = &self.config;
        let rows = batch.rows();
        let per_row = F::one() / F::lit(rows as f64);
        let mut pass_enc = None;
        let mut repr = None;
        let mut quantization = None;
        let (mut margin, mut contour, mut codebook, mut commitment) = (None, None, None, None);

        match cfg.quantizer {
            QuantizerKind::None => {}
            QuantizerKind::Iqae => {
                let enc = self.encode(tape, batch)?;
                let (r, frozen) = match mode {
                    QuantizeMode::Hard => {
                        let anchor = tape.value(enc).clone();
                        let indices: Vec<usize> = anchor.iter().map(|&x| iqae_button(x) as usize).collect();
                        let value = Array2::from_shape_fn((rows, 1), |(r, _)| centroid(indices[r]));
                        let r = tape.straight_through(enc, value.clone())?;
                        (r, FrozenQuantization { anchor, value, indices })
                    }
                    QuantizeMode::Frozen(f) => (tape.rebase(enc, &f.anchor, &f.value)?, f.clone()),
                };
                let m = tape.margin_penalty(enc);
                margin = Some(tape.scale(m, per_row));
                if batch.steps() >= 2 {
                    let c = tape.contour_penalty(enc, batch.intervals(), batch.size())?;
                    let per_transition = F::one() / F::lit(((batch.steps() - 1) * batch.size()) as f64);
                    contour = Some(tape.scale(c, per_transition));
                }
                pass_enc = Some(enc);
                repr = Some(r);
                quantization = Some(frozen);
            }
            QuantizerKind::Vq => {
                let z_e = self.encode(tape, batch)?;
                let table = self.param(tape, "vq.codebook")?;
                let (r, frozen) = match mode {
                    QuantizeMode::Hard => {
                        let anchor = tape.value(z_e).clone();
                        let codes = tape.value(table).clone();
                        let indices: Vec<usize> = anchor.rows().into_iter().map(|row| nearest_codeword(row, codes.view())).collect();
                        let value = codes.select(ndarray::Axis(0), &indices);
                        let r = tape.straight_through(z_e, value.clone())?;
                        (r, FrozenQuantization { anchor, value, indices })
                    }
                    QuantizeMode::Frozen(f) => (tape.rebase(z_e, &f.anchor, &f.value)?, f.clone()),
                };
                let picked = tape.gather_rows(table, &frozen.indices)?;
                let z_e_sg = tape.stop_grad(z_e);
                let diff = tape.sub(picked, z_e_sg)?;
                let cb = tape.sum_squares(diff);
                codebook = Some(tape.scale(cb, per_row));
                let picked_sg = tape.stop_grad(picked);
                let diff = tape.sub(z_e, picked_sg)?;
                let cm = tape.sum_squares(diff);
                commitment = Some(tape.scale(cm, per_row));
                pass_enc = Some(z_e);
                repr = Some(r);
                quantization = Some(frozen);
            }
        }

        let logits = self.decode(tape, batch, repr)?;
        let recons = tape.softmax_nll_mean(logits, &batch.targets())?;
        let mut total = recons;
        let weighted = [
            (margin, cfg.margin_weight),
            (contour, cfg.contour_weight),
            (codebook, 1.0),
            (commitment, cfg.commitment_beta),
        ];
        for (term, weight) in weighted {
            if let Some(term) = term {
                if weight > 0.0 {
                    let scaled = if weight == 1.0 { term } else { tape.scale(term, F::lit(weight)) };
                    total = tape.add(total, scaled)?;
                }
            }
        }
        Ok(ForwardPass {
            total,
            recons,
            margin,
            contour,
            codebook,
            commitment,
            enc: pass_enc,
            repr,
            logits,
            quantization,
        })
    }

    /// Encoder outputs and quantized indices for a batch, row-major per
    /// example: `result[b][t]`.
    pub fn encode_batch(&self, batch: &Batch) -> Result<(Vec<Vec<Vec<F>>>, Vec<Vec<usize>>), ModelError> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, batch)?;
        let values = tape.value(enc);
        let b = batch.size();
        let mut raw = vec![Vec::with_capacity(batch.steps()); b];
        let mut idx = vec![Vec::with_capacity(batch.steps()); b];
        let codes = (self.config.quantizer == QuantizerKind::Vq)
            .then(|| self.params.by_name("vq.codebook").expect("vq model has a codebook").clone());
        for (r, row) in values.rows().into_iter().enumerate() {
            let i = match &codes {
                Some(codes) => nearest_codeword(row, codes.view()),
                None => iqae_button(row[0]) as usize,
            };
            raw[r % b].push(row.to_vec());
            idx[r % b].push(i);
        }
        Ok((raw, idx))
    }
}

fn single_example(keys: &[u8], dt: Option<&[u8]>, use_dt: bool) -> Result<TrainingExample, ModelError> {
    match (dt, use_dt) {
        (Some(d), true) if d.len() == keys.len() => Ok(TrainingExample { keys: keys.to_vec(), dt_buckets: d.to_vec(), transpose: 0 }),
        (None, false) => Ok(TrainingExample { keys: keys.to_vec(), dt_buckets: vec![0; keys.len()], transpose: 0 }),
        (Some(_), true) => Err(ModelError::Config("ΔT buckets must match the key sequence length".into())),
        _ => Err(ModelError::Config(format!("ΔT features must be given iff use_dt (use_dt = {use_dt})"))),
    }
}

/// Encoder head output for one sequence, `[n × button_dim]`.
pub fn encoder_forward<F: Scalar>(model: &GenieModel<F>, keys: &[u8], dt: Option<&[u8]>) -> Result<Array2<F>, ModelError> {
    let batch = Batch::new(&[single_example(keys, dt, model.config.use_dt)?])?;
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &batch)?;
    Ok(tape.value(enc).clone())
}

/// Teacher-forced decoder logits for one sequence, `[n × 88]`.
pub fn decoder_forward<F: Scalar>(
    model: &GenieModel<F>,
    buttons_repr: Option<ArrayView2<F>>,
    keys: &[u8],
    dt: Option<&[u8]>,
) -> Result<Array2<F>, ModelError> {
    let batch = Batch::new(&[single_example(keys, dt, model.config.use_dt)?])?;
    let mut tape = Tape::new();
    let repr = buttons_repr.map(|r| tape.constant(r.to_owned()));
    let logits = model.decode(&mut tape, &batch, repr)?;
    Ok(tape.value(logits).clone())
}

/// `Σ max(|e| − 1, 0)²`
pub fn loss_margin<F: Scalar>(enc_s: &[F]) -> F {
    enc_s
        .iter()
        .map(|&e| {
            let over = (e.abs() - F::one()).max(F::zero());
            over * over
        })
        .sum()
}

/// `Σ_t max(1 − Δkey_t · Δenc_t, 0)²` over consecutive steps; 0 for fewer
/// than two steps.
pub fn loss_contour<F: Scalar>(keys: &[u8], enc_s: &[F]) -> F {
    keys.windows(2)
        .zip(enc_s.windows(2))
        .map(|(k, e)| {
            let dx = F::lit(f64::from(k[1]) - f64::from(k[0]));
            let hinge = (F::one() - dx * (e[1] - e[0])).max(F::zero());
            hinge * hinge
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quantize::iqae_quantize;
    use crate::nn::finite_diff_gradcheck;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(quantizer: QuantizerKind) -> ModelConfig {
        ModelConfig {
            hidden_size: 4,
            quantizer,
            window_n: 6,
            ..ModelConfig::default()
        }
    }

    fn examples(rows: &[&[u8]]) -> Vec<TrainingExample> {
        rows.iter().map(|k| TrainingExample::from_keys(k, 4)).collect()
    }

    fn to_nn(e: ModelError) -> NnError {
        match e {
            ModelError::Nn(e) => e,
            other => NnError::Divergence(other.to_string()),
        }
    }

    #[test]
    fn zero_network_encoder() {
        let mut model = GenieModel::<f64>::zeros(ModelConfig::default()).unwrap();
        assert_eq!(encoder_forward(&model, &[39], None).unwrap().column(0).to_vec(), vec![0.0]);
        let id = model.params.id("enc.head.b").unwrap();
        model.params.get_mut(id).fill(0.7);
        let enc = encoder_forward(&model, &[39, 41, 43], None).unwrap();
        assert!(enc.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn encoder_length_contract() {
        let model = GenieModel::<f32>::init(tiny(QuantizerKind::Iqae), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for n in [1usize, 8, 128] {
            let keys: Vec<u8> = (0..n).map(|i| (i % 88) as u8).collect();
            assert_eq!(encoder_forward(&model, &keys, None).unwrap().dim(), (n, 1));
        }
        assert!(encoder_forward(&model, &[1, 2], Some(&[0, 1])).is_err());
    }

    #[test]
    fn zero_decoder_is_uniform() {
        for q in [QuantizerKind::Iqae, QuantizerKind::Vq, QuantizerKind::None] {
            let model = GenieModel::<f64>::zeros(tiny(q)).unwrap();
            let batch = Batch::new(&examples(&[&[39, 41, 43, 44], &[10, 9, 8, 7]])).unwrap();
            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard).unwrap();
            let v = pass.values(&tape);
            assert!((v.recons - 88f64.ln()).abs() < 1e-12, "{q:?}: {}", v.recons);
        }
    }

    #[test]
    fn zero_weights_mean_loss_is_recons() {
        let config = ModelConfig {
            margin_weight: 0.0,
            contour_weight: 0.0,
            ..tiny(QuantizerKind::Iqae)
        };
        let model = GenieModel::<f64>::init(config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let batch = Batch::new(&examples(&[&[39, 41, 43, 44, 40, 30]])).unwrap();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard).unwrap();
        let v = pass.values(&tape);
        assert_eq!(v.total, v.recons);
        assert!(v.margin.is_some() && v.contour.is_some());
    }

    #[test]
    fn decoder_is_causal() {
        let model = GenieModel::<f32>::init(tiny(QuantizerKind::Iqae), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let keys = [39u8, 41, 43, 44, 46, 48, 50, 51];
        let repr = Array2::from_shape_fn((8, 1), |(t, _)| centroid::<f32>(t % 8));
        let base = decoder_forward(&model, Some(repr.view()), &keys, None).unwrap();
        for t in 0..keys.len() {
            let mut k2 = keys;
            k2[t] = 80;
            let mut r2 = repr.clone();
            r2[[t, 0]] = 0.9;
            let out = decoder_forward(&model, Some(r2.view()), &k2, None).unwrap();
            // key t only enters at step t + 1, the button at step t
            assert_eq!(out.slice(ndarray::s![..t, ..]), base.slice(ndarray::s![..t, ..]));
            if t + 1 < keys.len() {
                assert_ne!(out.row(t + 1), base.row(t + 1));
            }
        }
    }

    #[test]
    fn language_model_ignores_buttons() {
        let model = GenieModel::<f32>::init(tiny(QuantizerKind::None), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(model.params.iter().all(|(n, _)| !n.starts_with("enc")));
        let keys = [39u8, 41, 43];
        let logits = decoder_forward(&model, None, &keys, None).unwrap();
        assert_eq!(logits.dim(), (3, 88));
        let stray = Array2::<f32>::zeros((3, 1));
        assert!(decoder_forward(&model, Some(stray.view()), &keys, None).is_err());
        // buttons have no entry point, so the batched path matches the button-free one
        let batch = Batch::new(&examples(&[&keys])).unwrap();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard).unwrap();
        assert_eq!(tape.value(pass.logits), &logits);
    }

    #[test]
    fn dt_input_widths() {
        let config = ModelConfig { use_dt: true, ..tiny(QuantizerKind::Iqae) };
        let model = GenieModel::<f32>::init(config, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(model.params.by_name("enc.l0.fw.wx").unwrap().ncols(), 88 + 32);
        assert_eq!(model.params.by_name("dec.l0.wx").unwrap().ncols(), 89 + 1 + 32);
        assert!(encoder_forward(&model, &[1, 2], None).is_err());
        assert_eq!(encoder_forward(&model, &[1, 2], Some(&[31, 4])).unwrap().dim(), (2, 1));
    }

    #[test]
    fn margin_and_contour_examples() {
        assert_eq!(loss_margin(&[0.5f64, -0.9]), 0.0);
        assert_eq!(loss_margin(&[1.5f64]), 0.25);
        assert_eq!(loss_margin(&[-2.0f64, 1.5]), 1.25);
        assert_eq!(loss_contour(&[10, 12], &[0.0f64, 0.6]), 0.0);
        assert_eq!(loss_contour(&[10, 11], &[0.0f64, -0.5]), 2.25);
        assert_eq!(loss_contour(&[10, 10], &[0.0f64, 0.3]), 1.0);
        assert_eq!(loss_contour(&[10], &[0.3f64]), 0.0);
    }

    fn gradcheck_config(quantizer: QuantizerKind) -> (ModelConfig, Batch) {
        let config = ModelConfig {
            hidden_size: 3,
            num_layers: 2,
            ..tiny(quantizer)
        };
        let batch = Batch::new(&examples(&[&[39, 41, 38, 44, 40, 45], &[20, 18, 18, 25, 23, 30]])).unwrap();
        (config, batch)
    }

    fn split_store(store: &ParamStore<f64>, keep: impl Fn(&str) -> bool) -> (ParamStore<f64>, ParamStore<f64>) {
        let (mut kept, mut rest) = (ParamStore::new(), ParamStore::new());
        for (name, v) in store.iter() {
            if keep(name) { &mut kept } else { &mut rest }.insert(name, v.clone());
        }
        (kept, rest)
    }

    fn merged(a: &ParamStore<f64>, b: &ParamStore<f64>) -> ParamStore<f64> {
        let mut out = a.clone();
        for (name, v) in b.iter() {
            out.insert(name, v.clone());
        }
        out
    }

    /// Finite differences over the parameters selected by `checked`, with the
    /// loss term picked by `term`. Stop-gradient edges make a term's value
    /// depend on parameters its gradient ignores, so VQ terms are checked
    /// against the parameters they actually train.
    fn check_loss(
        quantizer: QuantizerKind,
        checked: impl Fn(&str) -> bool,
        term: impl Fn(&mut Tape<f64>, &ForwardPass<f64>) -> Var,
    ) {
        let (config, batch) = gradcheck_config(quantizer);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = GenieModel::<f64>::init(config.clone(), &mut rng).unwrap();
        // push some encoder outputs past ±1 so the margin term is active
        if let Some(id) = model.params.id("enc.head.b") {
            model.params.get_mut(id).fill(0.9);
        }
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard).unwrap();
        let frozen = pass.quantization.clone();
        let mode = match &frozen {
            Some(f) => QuantizeMode::Frozen(f),
            None => QuantizeMode::Hard,
        };
        let (free, fixed) = split_store(&model.params, &checked);
        let report = finite_diff_gradcheck(
            &free,
            |store, tape| {
                let m = GenieModel { config: config.clone(), params: merged(store, &fixed) };
                let pass = m.forward(tape, &batch, mode).map_err(to_nn)?;
                Ok(term(tape, &pass))
            },
            1e-5,
            6,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{quantizer:?}: {report:?}");
        assert!(report.checked >= 6, "{report:?}");
    }

    #[test]
    fn gradcheck_iqae_loss() {
        check_loss(QuantizerKind::Iqae, |_| true, |_, p| p.total);
    }

    #[test]
    fn gradcheck_vq_loss() {
        let beta = ModelConfig::default().commitment_beta;
        check_loss(QuantizerKind::Vq, |n| n != "vq.codebook", |tape, p| {
            let c = tape.scale(p.commitment.unwrap(), beta);
            tape.add(p.recons, c).unwrap()
        });
        check_loss(QuantizerKind::Vq, |n| n == "vq.codebook", |_, p| p.codebook.unwrap());
    }

    #[test]
    fn gradcheck_language_model_loss() {
        check_loss(QuantizerKind::None, |_| true, |_, p| p.total);
    }

    #[test]
    fn straight_through_is_identity() {
        for q in [QuantizerKind::Iqae, QuantizerKind::Vq] {
            let (config, batch) = gradcheck_config(q);
            let model = GenieModel::<f64>::init(config, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
            let mut hard = Tape::new();
            let pass = model.forward(&mut hard, &batch, QuantizeMode::Hard).unwrap();
            hard.backward(pass.total).unwrap();
            let frozen = pass.quantization.clone().unwrap();
            let mut soft = Tape::new();
            let pass2 = model.forward(&mut soft, &batch, QuantizeMode::Frozen(&frozen)).unwrap();
            soft.backward(pass2.total).unwrap();
            assert_eq!(hard.scalar(pass.total), soft.scalar(pass2.total));
            let g_hard = hard.grad(pass.enc.unwrap()).unwrap();
            let g_soft = soft.grad(pass2.enc.unwrap()).unwrap();
            assert_eq!(g_hard, g_soft, "{q:?}");
            assert!(g_hard.iter().any(|&g| g != 0.0));
            // the quantizer passes the decoder-side gradient through unchanged
            assert_eq!(hard.grad(pass.repr.unwrap()).unwrap().dim(), g_hard.dim());
        }
    }

    #[test]
    fn hard_pass_uses_centroids() {
        let (config, batch) = gradcheck_config(QuantizerKind::Iqae);
        let model = GenieModel::<f64>::init(config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch, QuantizeMode::Hard).unwrap();
        let enc: Vec<f64> = tape.value(pass.enc.unwrap()).iter().copied().collect();
        let q = iqae_quantize(&enc);
        let repr: Vec<f64> = tape.value(pass.repr.unwrap()).iter().copied().collect();
        assert_eq!(repr, q.centroid_values);
        let (_, idx) = model.encode_batch(&batch).unwrap();
        for (r, &button) in q.buttons.iter().enumerate() {
            assert_eq!(idx[r % 2][r / 2], button as usize);
        }
    }

    proptest! {
        #[test]
        fn increasing_encoder_gives_nondecreasing_buttons(
            start in -1.5f64..1.5,
            steps in proptest::collection::vec(2.0f64 / 7.0..1.0, 1..12),
        ) {
            let mut enc = vec![start];
            for s in steps {
                enc.push(enc.last().unwrap() + s);
            }
            let b = iqae_quantize(&enc).buttons;
            prop_assert!(b.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn contour_zero_iff_products_clear(
            keys in proptest::collection::vec(0u8..88, 2..10),
            enc in proptest::collection::vec(-2.0f64..2.0, 10),
        ) {
            let enc = &enc[..keys.len()];
            let all_clear = keys.windows(2).zip(enc.windows(2))
                .all(|(k, e)| (f64::from(k[1]) - f64::from(k[0])) * (e[1] - e[0]) >= 1.0);
            let opposed = keys.windows(2).zip(enc.windows(2)).any(|(k, e)| {
                let dx = f64::from(k[1]) - f64::from(k[0]);
                dx != 0.0 && dx.signum() * (e[1] - e[0]).signum() < 0.0
            });
            let loss = loss_contour(&keys, enc);
            if all_clear { prop_assert_eq!(loss, 0.0); }
            if opposed { prop_assert!(loss > 0.0); }
        }
    }
}
