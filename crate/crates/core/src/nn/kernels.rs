//! Graph-free kernels shared by the tape ops and the inference path.

use ndarray::{Array1, ArrayView1, ArrayView2};

use super::{shape_err, NnError, Scalar};

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    // Split on sign so neither branch can overflow exp().
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `y = W x + b` for `W: [O × I]`, `b: [O]`, `x: [I]`.
pub fn affine<F: Scalar>(
    w: ArrayView2<F>,
    b: ArrayView1<F>,
    x: ArrayView1<F>,
) -> Result<Array1<F>, NnError> {
    let (out_dim, in_dim) = w.dim();
    if x.len() != in_dim {
        return Err(shape_err("affine", format!("x[{in_dim}]"), format!("x[{}]", x.len())));
    }
    if b.len() != out_dim {
        return Err(shape_err("affine", format!("b[{out_dim}]"), format!("b[{}]", b.len())));
    }
    Ok(w.dot(&x) + b)
}

fn log_sum_exp<F: Scalar>(logits: ArrayView1<F>) -> F {
    let max = logits.fold(F::neg_infinity(), |m, &v| m.max(v));
    if max == F::neg_infinity() {
        return max;
    }
    max + logits.iter().map(|&v| (v - max).exp()).sum::<F>().ln()
}

pub fn log_softmax<F: Scalar>(logits: ArrayView1<F>) -> Array1<F> {
    let lse = log_sum_exp(logits);
    logits.mapv(|v| v - lse)
}

pub fn softmax<F: Scalar>(logits: ArrayView1<F>) -> Array1<F> {
    log_softmax(logits).mapv(F::exp)
}

/// Negative log-likelihood of `target` under `softmax(logits)`.
pub fn softmax_nll<F: Scalar>(logits: ArrayView1<F>, target: usize) -> Result<F, NnError> {
    if logits.is_empty() {
        return Err(shape_err("softmax_nll", "V >= 1", "V = 0"));
    }
    if target >= logits.len() {
        return Err(NnError::Index {
            op: "softmax_nll",
            index: target,
            size: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[target])
}
