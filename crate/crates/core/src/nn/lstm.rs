use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use super::kernels::sigmoid;
use super::{shape_err, NnError, ParamStore, Scalar, Tape, Var};

/// Gate blocks inside the `4H` dimension, in storage order.
pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_G: usize = 2;
pub const GATE_O: usize = 3;
pub const NUM_GATES: usize = 4;

/// Weights of one LSTM layer. Rows are gate blocks `i, f, g, o`, each `H` tall.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams<F> {
    /// `[4H × I]`
    pub input_weights: Array2<F>,
    /// `[4H × H]`
    pub recurrent_weights: Array2<F>,
    /// `[4H]`
    pub biases: Array1<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<F> {
    pub h: Array1<F>,
    pub c: Array1<F>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

impl<F: Scalar> LstmLayerParams<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input_weights: Array2::zeros((NUM_GATES * hidden, input)),
            recurrent_weights: Array2::zeros((NUM_GATES * hidden, hidden)),
            biases: Array1::zeros(NUM_GATES * hidden),
        }
    }

    /// Uniform `[-1/√H, 1/√H]` weights, forget-gate bias 1, other biases 0.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |_| F::lit(rng.random_range(-bound..=bound));
        let input_weights = Array2::from_shape_fn((NUM_GATES * hidden, input), &mut draw);
        let recurrent_weights = Array2::from_shape_fn((NUM_GATES * hidden, hidden), &mut draw);
        let mut biases = Array1::zeros(NUM_GATES * hidden);
        biases
            .slice_mut(s![GATE_F * hidden..(GATE_F + 1) * hidden])
            .fill(F::one());
        Self {
            input_weights,
            recurrent_weights,
            biases,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.recurrent_weights.ncols()
    }

    pub fn input_size(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn register(&self, store: &mut ParamStore<F>, prefix: &str) {
        store.insert(format!("{prefix}.wx"), self.input_weights.clone());
        store.insert(format!("{prefix}.wh"), self.recurrent_weights.clone());
        store.insert(format!("{prefix}.b"), self.biases.clone().insert_axis(ndarray::Axis(0)));
    }

    pub fn from_store(store: &ParamStore<F>, prefix: &str) -> Option<Self> {
        Some(Self {
            input_weights: store.by_name(&format!("{prefix}.wx"))?.clone(),
            recurrent_weights: store.by_name(&format!("{prefix}.wh"))?.clone(),
            biases: store.by_name(&format!("{prefix}.b"))?.row(0).to_owned(),
        })
    }

    fn check(&self) -> Result<usize, NnError> {
        let hidden = self.hidden_size();
        let rows = NUM_GATES * hidden;
        if hidden == 0 || self.input_size() == 0 {
            return Err(shape_err("lstm", "H > 0 and I > 0", format!("H = {hidden}, I = {}", self.input_size())));
        }
        if self.recurrent_weights.nrows() != rows || self.input_weights.nrows() != rows || self.biases.len() != rows {
            return Err(shape_err("lstm", format!("{rows} gate rows"), "inconsistent gate blocks"));
        }
        Ok(hidden)
    }
}

/// One LSTM step:
/// `c_t = σ(f) ⊙ c_prev + σ(i) ⊙ tanh(g)`, `h_t = σ(o) ⊙ tanh(c_t)`.
pub fn lstm_step<F: Scalar>(
    params: &LstmLayerParams<F>,
    x: ArrayView1<F>,
    h_prev: ArrayView1<F>,
    c_prev: ArrayView1<F>,
) -> Result<(Array1<F>, Array1<F>), NnError> {
    let hidden = params.check()?;
    if x.len() != params.input_size() {
        return Err(shape_err("lstm_step", format!("x[{}]", params.input_size()), format!("x[{}]", x.len())));
    }
    if h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(shape_err("lstm_step", format!("state[{hidden}]"), format!("h[{}], c[{}]", h_prev.len(), c_prev.len())));
    }
    let pre = params.input_weights.dot(&x) + params.recurrent_weights.dot(&h_prev) + &params.biases;
    let mut h = Array1::zeros(hidden);
    let mut c = Array1::zeros(hidden);
    for j in 0..hidden {
        let i = sigmoid(pre[GATE_I * hidden + j]);
        let f = sigmoid(pre[GATE_F * hidden + j]);
        let g = pre[GATE_G * hidden + j].tanh();
        let o = sigmoid(pre[GATE_O * hidden + j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    Ok((h, c))
}

/// Runs one LSTM layer over a time-major batch on the tape.
///
/// `inputs` is `[T·B × I]` with row `t·B + b`; the result is `[T·B × H]` in
/// the same row order. With `reverse` the recurrence runs from the last step
/// to the first, but outputs stay aligned with their input rows. State
/// starts at zero.
pub fn lstm_sequence<F: Scalar>(
    tape: &mut Tape<F>,
    wx: Var,
    wh: Var,
    bias: Var,
    inputs: Var,
    batch: usize,
    reverse: bool,
) -> Result<Var, NnError> {
    let rows = tape.value(inputs).nrows();
    if batch == 0 || !rows.is_multiple_of(batch) {
        return Err(shape_err("lstm_sequence", format!("rows divisible by batch {batch}"), rows));
    }
    let steps = rows / batch;
    let hidden = tape.value(wh).ncols();

    let projected = tape.matmul_t(inputs, wx)?;
    let projected = tape.add_row(projected, bias)?;

    let mut c = tape.constant(Array2::zeros((batch, hidden)));
    let mut h: Option<Var> = None;
    let mut outputs = vec![None; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let mut gates = tape.row_slice(projected, t * batch, batch)?;
        if let Some(h_prev) = h {
            let rec = tape.matmul_t(h_prev, wh)?;
            gates = tape.add(gates, rec)?;
        }
        c = tape.lstm_cell_state(gates, c)?;
        let h_t = tape.lstm_cell_output(gates, c)?;
        outputs[t] = Some(h_t);
        h = Some(h_t);
    }
    let outputs: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step visited")).collect();
    tape.concat_rows(&outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar re-derivation of the recurrence, written without ndarray.
    fn scalar_oracle(p: &LstmLayerParams<f64>, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hid = h.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |row: usize| {
            let mut acc = p.biases[row];
            for (k, xv) in x.iter().enumerate() {
                acc += p.input_weights[[row, k]] * xv;
            }
            for (k, hv) in h.iter().enumerate() {
                acc += p.recurrent_weights[[row, k]] * hv;
            }
            acc
        };
        let mut h_out = vec![0.0; hid];
        let mut c_out = vec![0.0; hid];
        for j in 0..hid {
            let i = sig(pre(j));
            let f = sig(pre(hid + j));
            let g = pre(2 * hid + j).tanh();
            let o = sig(pre(3 * hid + j));
            c_out[j] = f * c[j] + i * g;
            h_out[j] = o * c_out[j].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn zero_network_zero_state_gives_zero() {
        let p = LstmLayerParams::<f64>::zeros(3, 5);
        let z = Array1::zeros(5);
        let (h, c) = lstm_step(&p, Array1::zeros(3).view(), z.view(), z.view()).unwrap();
        assert!(h.iter().chain(c.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_halves_cell_state() {
        let p = LstmLayerParams::<f64>::zeros(2, 3);
        let c_prev = Array1::from(vec![1.0, -2.0, 0.4]);
        let (h, c) = lstm_step(&p, Array1::zeros(2).view(), Array1::zeros(3).view(), c_prev.view()).unwrap();
        for j in 0..3 {
            assert!((c[j] - 0.5 * c_prev[j]).abs() < 1e-15);
            assert!((h[j] - 0.5 * (0.5 * c_prev[j]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let mut p = LstmLayerParams::<f64>::init(6, 4, &mut rng);
            p.biases.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (ho, co) = scalar_oracle(&p, &x, &h, &c);
            let (hg, cg) = lstm_step(
                &p,
                Array1::from(x).view(),
                Array1::from(h).view(),
                Array1::from(c).view(),
            )
            .unwrap();
            for j in 0..4 {
                assert!(((hg[j] - ho[j]) / ho[j]).abs() < 1e-12);
                assert!(((cg[j] - co[j]) / co[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_dims() {
        let p = LstmLayerParams::<f64>::zeros(3, 2);
        let z2 = Array1::zeros(2);
        assert!(lstm_step(&p, Array1::zeros(4).view(), z2.view(), z2.view()).is_err());
        assert!(lstm_step(&p, Array1::zeros(3).view(), Array1::zeros(3).view(), z2.view()).is_err());
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmLayerParams::<f32>::init(5, 8, &mut rng);
        let bound = 1.0 / 8f32.sqrt();
        assert!(p.input_weights.iter().all(|v| v.abs() <= bound));
        for (k, &b) in p.biases.iter().enumerate() {
            let expected = if k / 8 == GATE_F { 1.0 } else { 0.0 };
            assert_eq!(b, expected);
        }
    }

    #[test]
    fn tape_sequence_matches_stepwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LstmLayerParams::<f64>::init(3, 4, &mut rng);
        let (steps, batch) = (5, 2);
        let inputs = Array2::from_shape_fn((steps * batch, 3), |_| rng.random_range(-1.0..1.0));

        let mut store = ParamStore::new();
        p.register(&mut store, "l");
        for reverse in [false, true] {
            let mut tape = Tape::new();
            let wx = tape.param(&store, store.id("l.wx").unwrap());
            let wh = tape.param(&store, store.id("l.wh").unwrap());
            let b = tape.param(&store, store.id("l.b").unwrap());
            let x = tape.constant(inputs.clone());
            let out = lstm_sequence(&mut tape, wx, wh, b, x, batch, reverse).unwrap();
            let out = tape.value(out).clone();
            for bi in 0..batch {
                let mut state = LstmState::zeros(4);
                let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
                for t in order {
                    let (h, c) = lstm_step(&p, inputs.row(t * batch + bi), state.h.view(), state.c.view()).unwrap();
                    for j in 0..4 {
                        assert!((out[[t * batch + bi, j]] - h[j]).abs() < 1e-14);
                    }
                    state = LstmState { h, c };
                }
            }
        }
    }
}
