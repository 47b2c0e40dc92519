//! Append-only computation tape.
//!
//! Every op pushes one node whose inputs already live on the tape, so node
//! order is a topological order and `backward` is a single reverse sweep.
//! Values are 2-D; scalars are `1 × 1`.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::kernels::sigmoid;
use super::{shape_err, NnError, ParamId, ParamStore, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Constant,
    Param,
    /// `a · wᵀ`
    MatMulT { a: Var, w: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    /// `a` plus a `1 × n` row broadcast over every row.
    AddRow { a: Var, row: Var },
    Scale { a: Var, k: F },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowSlice { a: Var, start: usize },
    GatherRows { a: Var, idx: Vec<usize> },
    /// `c = σ(f) ⊙ c_prev + σ(i) ⊙ tanh(g)`
    CellState { gates: Var, c_prev: Var },
    /// `h = σ(o) ⊙ tanh(c)`
    CellOutput { gates: Var, c: Var },
    /// Value replaced by the caller, gradient passed through unchanged.
    Identity { a: Var },
    StopGrad,
    Sum { a: Var },
    SumSquares { a: Var },
    SoftmaxNllMean { logits: Var, targets: Vec<usize>, probs: Array2<F> },
    MarginPenalty { a: Var },
    ContourPenalty { enc: Var, dx: Vec<F>, stride: usize },
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub values: Vec<Array2<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            values: store.values().iter().map(|v| Array2::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.values[id.index()]
    }
}

#[derive(Debug, Default)]
pub struct Tape<F> {
    values: Vec<Array2<F>>,
    ops: Vec<Op<F>>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Array2<F>>>,
    param_vars: HashMap<usize, Var>,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            grads: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.values[v.0]
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> F {
        self.values[v.0][[0, 0]]
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Array2<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.values[v.0].dim()
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Puts a parameter on the tape. Repeated calls for the same id return
    /// the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id.index()) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.param_vars.insert(id.index(), v);
        v
    }

    pub fn matmul_t(&mut self, a: Var, w: Var) -> Result<Var, NnError> {
        let (_, ia) = self.dims(a);
        let (_, iw) = self.dims(w);
        if ia != iw {
            return Err(shape_err("matmul_t", format!("inner {iw}"), format!("inner {ia}")));
        }
        let value = self.values[a.0].dot(&self.values[w.0].t());
        let ng = self.ng(a) || self.ng(w);
        Ok(self.push(value, Op::MatMulT { a, w }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err("add", format!("{:?}", self.dims(a)), format!("{:?}", self.dims(b))));
        }
        let value = &self.values[a.0] + &self.values[b.0];
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err("sub", format!("{:?}", self.dims(a)), format!("{:?}", self.dims(b))));
        }
        let value = &self.values[a.0] - &self.values[b.0];
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub { a, b }, ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (_, cols) = self.dims(a);
        if self.dims(row) != (1, cols) {
            return Err(shape_err("add_row", format!("(1, {cols})"), format!("{:?}", self.dims(row))));
        }
        let value = &self.values[a.0] + &self.values[row.0];
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(value, Op::AddRow { a, row }, ng))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let value = &self.values[a.0] * k;
        let ng = self.ng(a);
        self.push(value, Op::Scale { a, k }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.dims(parts[0]).0;
        if let Some(bad) = parts.iter().find(|p| self.dims(**p).0 != rows) {
            return Err(shape_err("concat_cols", format!("{rows} rows"), format!("{:?}", self.dims(*bad))));
        }
        let views: Vec<ArrayView2<F>> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = self.dims(parts[0]).1;
        if let Some(bad) = parts.iter().find(|p| self.dims(**p).1 != cols) {
            return Err(shape_err("concat_rows", format!("{cols} cols"), format!("{:?}", self.dims(*bad))));
        }
        let views: Vec<ArrayView2<F>> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("cols checked");
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn row_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let (rows, _) = self.dims(a);
        if start + len > rows {
            return Err(NnError::Index { op: "row_slice", index: start + len, size: rows });
        }
        let value = self.values[a.0].slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        Ok(self.push(value, Op::RowSlice { a, start }, ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NnError> {
        let (rows, _) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NnError::Index { op: "gather_rows", index: bad, size: rows });
        }
        let value = self.values[a.0].select(Axis(0), idx);
        let ng = self.ng(a);
        Ok(self.push(value, Op::GatherRows { a, idx: idx.to_vec() }, ng))
    }

    fn check_cell(&self, op: &'static str, gates: Var, state: Var) -> Result<usize, NnError> {
        let (b, g) = self.dims(gates);
        let (bs, h) = self.dims(state);
        if g != 4 * h || b != bs {
            return Err(shape_err(op, format!("gates ({bs}, {})", 4 * h), format!("({b}, {g})")));
        }
        Ok(h)
    }

    /// Cell-state half of an LSTM step. Gate blocks are ordered i, f, g, o.
    pub fn lstm_cell_state(&mut self, gates: Var, c_prev: Var) -> Result<Var, NnError> {
        let h = self.check_cell("lstm_cell_state", gates, c_prev)?;
        let gv = &self.values[gates.0];
        let mut c = self.values[c_prev.0].clone();
        Zip::from(&mut c)
            .and(gv.slice(s![.., 0..h]))
            .and(gv.slice(s![.., h..2 * h]))
            .and(gv.slice(s![.., 2 * h..3 * h]))
            .for_each(|c, &i, &f, &g| *c = sigmoid(f) * *c + sigmoid(i) * g.tanh());
        let ng = self.ng(gates) || self.ng(c_prev);
        Ok(self.push(c, Op::CellState { gates, c_prev }, ng))
    }

    /// Hidden-output half of an LSTM step.
    pub fn lstm_cell_output(&mut self, gates: Var, c: Var) -> Result<Var, NnError> {
        let h = self.check_cell("lstm_cell_output", gates, c)?;
        let gv = &self.values[gates.0];
        let mut out = self.values[c.0].clone();
        Zip::from(&mut out)
            .and(gv.slice(s![.., 3 * h..4 * h]))
            .for_each(|v, &o| *v = sigmoid(o) * v.tanh());
        let ng = self.ng(gates) || self.ng(c);
        Ok(self.push(out, Op::CellOutput { gates, c }, ng))
    }

    /// Node whose forward value is `value` but whose backward is the
    /// identity onto `a`: the straight-through estimator.
    pub fn straight_through(&mut self, a: Var, value: Array2<F>) -> Result<Var, NnError> {
        if value.dim() != self.dims(a) {
            return Err(shape_err("straight_through", format!("{:?}", self.dims(a)), format!("{:?}", value.dim())));
        }
        let ng = self.ng(a);
        Ok(self.push(value, Op::Identity { a }, ng))
    }

    /// Differentiable stand-in for a frozen quantizer: `base + (a − anchor)`.
    /// When `a == anchor` the value equals `base` bit for bit.
    pub fn rebase(&mut self, a: Var, anchor: &Array2<F>, base: &Array2<F>) -> Result<Var, NnError> {
        let dims = self.dims(a);
        if anchor.dim() != dims || base.dim() != dims {
            return Err(shape_err("rebase", format!("{dims:?}"), format!("{:?}", anchor.dim())));
        }
        let value = base + &(&self.values[a.0] - anchor);
        let ng = self.ng(a);
        Ok(self.push(value, Op::Identity { a }, ng))
    }

    pub fn stop_grad(&mut self, a: Var) -> Var {
        let value = self.values[a.0].clone();
        self.push(value, Op::StopGrad, false)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.values[a.0].sum();
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), total), Op::Sum { a }, ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let total = self.values[a.0].iter().map(|&v| v * v).sum();
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), total), Op::SumSquares { a }, ng)
    }

    /// Mean over rows of `logsumexp(row) − row[target]`.
    pub fn softmax_nll_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let (rows, vocab) = self.dims(logits);
        if targets.len() != rows || rows == 0 {
            return Err(shape_err("softmax_nll_mean", format!("{rows} targets"), targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(NnError::Index { op: "softmax_nll_mean", index: bad, size: vocab });
        }
        let lv = &self.values[logits.0];
        let mut probs = lv.clone();
        let mut total = F::zero();
        for ((mut row, &t), raw) in probs.axis_iter_mut(Axis(0)).zip(targets).zip(lv.rows()) {
            let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let z: F = row.sum();
            total += z.ln() - (raw[t] - max);
            row.mapv_inplace(|v| v / z);
        }
        let mean = total / F::lit(rows as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            Array2::from_elem((1, 1), mean),
            Op::SoftmaxNllMean { logits, targets: targets.to_vec(), probs },
            ng,
        ))
    }

    /// `Σ max(|a| − 1, 0)²`
    pub fn margin_penalty(&mut self, a: Var) -> Var {
        let total = self.values[a.0]
            .iter()
            .map(|&v| {
                let e = (v.abs() - F::one()).max(F::zero());
                e * e
            })
            .sum();
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), total), Op::MarginPenalty { a }, ng)
    }

    /// `Σ_r max(1 − dx[r]·(enc[r] − enc[r − stride]), 0)²` over rows
    /// `r ≥ stride` of a single-column `enc`. With time-major batches the
    /// stride is the batch size, so `r − stride` is the previous step of the
    /// same sequence. `dx[r]` for `r < stride` is ignored.
    pub fn contour_penalty(&mut self, enc: Var, dx: Vec<F>, stride: usize) -> Result<Var, NnError> {
        let (rows, cols) = self.dims(enc);
        if cols != 1 || dx.len() != rows || stride == 0 {
            return Err(shape_err("contour_penalty", format!("({rows}, 1) with {rows} intervals"), format!("({rows}, {cols}) with {}", dx.len())));
        }
        let e = &self.values[enc.0];
        let mut total = F::zero();
        for r in stride..rows {
            let hinge = (F::one() - dx[r] * (e[[r, 0]] - e[[r - stride, 0]])).max(F::zero());
            total += hinge * hinge;
        }
        let ng = self.ng(enc);
        Ok(self.push(Array2::from_elem((1, 1), total), Op::ContourPenalty { enc, dx, stride }, ng))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of earlier passes are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        if self.values.is_empty() {
            return Err(NnError::Backward("an empty tape (no forward pass recorded)"));
        }
        if loss.0 >= self.values.len() {
            return Err(NnError::Backward("a node that is not on this tape"));
        }
        if self.dims(loss) != (1, 1) {
            return Err(NnError::Backward("a non-scalar node"));
        }
        self.grads = vec![None; self.values.len()];
        self.grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            if !self.needs_grad[idx] {
                self.grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Array2<F>) {
        match &mut self.grads[v.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn grad_slot(&mut self, v: Var) -> &mut Array2<F> {
        let dim = self.values[v.0].raw_dim();
        self.grads[v.0].get_or_insert_with(|| Array2::zeros(dim))
    }

    fn propagate(&mut self, idx: usize, g: &Array2<F>) {
        // Ops are moved out temporarily so `self` stays mutable for grads.
        let op = std::mem::replace(&mut self.ops[idx], Op::Constant);
        match &op {
            Op::Constant | Op::Param | Op::StopGrad => {}
            Op::MatMulT { a, w } => {
                if self.ng(*a) {
                    let d = g.dot(&self.values[w.0]);
                    self.accumulate(*a, d);
                }
                if self.ng(*w) {
                    let d = g.t().dot(&self.values[a.0]);
                    self.accumulate(*w, d);
                }
            }
            Op::Add { a, b } => {
                if self.ng(*a) {
                    self.accumulate(*a, g.clone());
                }
                if self.ng(*b) {
                    self.accumulate(*b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.ng(*a) {
                    self.accumulate(*a, g.clone());
                }
                if self.ng(*b) {
                    self.accumulate(*b, g.mapv(|v| -v));
                }
            }
            Op::AddRow { a, row } => {
                if self.ng(*a) {
                    self.accumulate(*a, g.clone());
                }
                if self.ng(*row) {
                    let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(*row, d);
                }
            }
            Op::Scale { a, k } => {
                if self.ng(*a) {
                    self.accumulate(*a, g * *k);
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if self.ng(*p) {
                        self.accumulate(*p, g.slice(s![.., col..col + w]).to_owned());
                    }
                    col += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for p in parts {
                    let h = self.dims(*p).0;
                    if self.ng(*p) {
                        self.accumulate(*p, g.slice(s![row..row + h, ..]).to_owned());
                    }
                    row += h;
                }
            }
            Op::RowSlice { a, start } => {
                if self.ng(*a) {
                    let len = g.nrows();
                    let start = *start;
                    let slot = self.grad_slot(*a);
                    let mut target = slot.slice_mut(s![start..start + len, ..]);
                    target += g;
                }
            }
            Op::GatherRows { a, idx } => {
                if self.ng(*a) {
                    let slot = self.grad_slot(*a);
                    for (r, &src) in idx.iter().enumerate() {
                        let mut target = slot.row_mut(src);
                        target += &g.row(r);
                    }
                }
            }
            Op::CellState { gates, c_prev } => {
                let h = self.dims(*c_prev).1;
                let gv = &self.values[gates.0];
                let cp = &self.values[c_prev.0];
                if self.ng(*gates) {
                    let mut d = Array2::<F>::zeros(gv.raw_dim());
                    for r in 0..gv.nrows() {
                        for j in 0..h {
                            let dc = g[[r, j]];
                            let si = sigmoid(gv[[r, j]]);
                            let sf = sigmoid(gv[[r, h + j]]);
                            let tg = gv[[r, 2 * h + j]].tanh();
                            d[[r, j]] = dc * tg * si * (F::one() - si);
                            d[[r, h + j]] = dc * cp[[r, j]] * sf * (F::one() - sf);
                            d[[r, 2 * h + j]] = dc * si * (F::one() - tg * tg);
                        }
                    }
                    self.accumulate(*gates, d);
                }
                if self.ng(*c_prev) {
                    let gv = &self.values[gates.0];
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(gv.slice(s![.., h..2 * h]))
                        .for_each(|d, &pf| *d *= sigmoid(pf));
                    self.accumulate(*c_prev, d);
                }
            }
            Op::CellOutput { gates, c } => {
                let h = self.dims(*c).1;
                let (d_gates, d_c) = {
                    let gv = &self.values[gates.0];
                    let cv = &self.values[c.0];
                    let d_gates = self.ng(*gates).then(|| {
                        let mut d = Array2::<F>::zeros(gv.raw_dim());
                        Zip::from(d.slice_mut(s![.., 3 * h..4 * h]))
                            .and(g)
                            .and(cv)
                            .and(gv.slice(s![.., 3 * h..4 * h]))
                            .for_each(|d, &dh, &c, &po| {
                                let so = sigmoid(po);
                                *d = dh * c.tanh() * so * (F::one() - so);
                            });
                        d
                    });
                    let d_c = self.ng(*c).then(|| {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(cv)
                            .and(gv.slice(s![.., 3 * h..4 * h]))
                            .for_each(|d, &c, &po| {
                                let tc = c.tanh();
                                *d *= sigmoid(po) * (F::one() - tc * tc);
                            });
                        d
                    });
                    (d_gates, d_c)
                };
                if let Some(d) = d_gates {
                    self.accumulate(*gates, d);
                }
                if let Some(d) = d_c {
                    self.accumulate(*c, d);
                }
            }
            Op::Identity { a } => {
                if self.ng(*a) {
                    self.accumulate(*a, g.clone());
                }
            }
            Op::Sum { a } => {
                if self.ng(*a) {
                    let d = Array2::from_elem(self.values[a.0].raw_dim(), g[[0, 0]]);
                    self.accumulate(*a, d);
                }
            }
            Op::SumSquares { a } => {
                if self.ng(*a) {
                    let k = F::lit(2.0) * g[[0, 0]];
                    let d = &self.values[a.0] * k;
                    self.accumulate(*a, d);
                }
            }
            Op::SoftmaxNllMean { logits, targets, probs } => {
                if self.ng(*logits) {
                    let k = g[[0, 0]] / F::lit(targets.len() as f64);
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= F::one();
                    }
                    d *= k;
                    self.accumulate(*logits, d);
                }
            }
            Op::MarginPenalty { a } => {
                if self.ng(*a) {
                    let k = g[[0, 0]];
                    let d = self.values[a.0].mapv(|v| {
                        let e = (v.abs() - F::one()).max(F::zero());
                        F::lit(2.0) * e * v.signum() * k
                    });
                    self.accumulate(*a, d);
                }
            }
            Op::ContourPenalty { enc, dx, stride } => {
                if self.ng(*enc) {
                    let k = g[[0, 0]];
                    let e = &self.values[enc.0];
                    let mut d = Array2::<F>::zeros(e.raw_dim());
                    for r in *stride..e.nrows() {
                        let hinge = (F::one() - dx[r] * (e[[r, 0]] - e[[r - stride, 0]])).max(F::zero());
                        let dd = -F::lit(2.0) * hinge * dx[r] * k;
                        d[[r, 0]] += dd;
                        d[[r - stride, 0]] -= dd;
                    }
                    self.accumulate(*enc, d);
                }
            }
        }
        self.ops[idx] = op;
    }

    /// Collects parameter gradients after [`Tape::backward`]; parameters that
    /// never reached the loss get exact zeros.
    pub fn param_grads(&self, store: &ParamStore<F>) -> Gradients<F> {
        let mut grads = Gradients::zeros_like(store);
        for (&pid, &var) in &self.param_vars {
            if let Some(g) = self.grad(var) {
                grads.values[pid].assign(g);
            }
        }
        grads
    }
}
