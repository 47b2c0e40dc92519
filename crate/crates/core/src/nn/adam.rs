use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Array2<F>>,
    pub second_moment: Vec<Array2<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || params.values().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

pub fn global_norm<F: Scalar>(grads: &Gradients<F>) -> F {
    grads
        .values
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| v * v)
        .sum::<F>()
        .sqrt()
}

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut Gradients<F>, max_norm: F) -> F {
    let norm = global_norm(grads);
    if norm.is_finite() && norm > max_norm {
        let k = max_norm / norm;
        for g in &mut grads.values {
            *g *= k;
        }
    }
    norm
}

/// One bias-corrected Adam step. A non-finite gradient anywhere rejects the
/// whole step and leaves both parameters and state untouched.
pub fn adam_update<F: Scalar>(
    params: &mut ParamStore<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
) -> Result<(), NnError> {
    if grads.values.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(super::shape_err(
            "adam_update",
            format!("{} parameter tensors", params.len()),
            grads.values.len(),
        ));
    }
    for (id, g) in params.ids().zip(&grads.values) {
        if g.raw_dim() != params.get(id).raw_dim() {
            return Err(super::shape_err("adam_update", format!("{:?}", params.get(id).dim()), format!("{:?}", g.dim())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Divergence(params.name(id).to_string()));
        }
    }

    state.step_count += 1;
    let cfg = state.config;
    let t = state.step_count as i32;
    let b1 = F::lit(cfg.beta1);
    let b2 = F::lit(cfg.beta2);
    let one = F::one();
    let corr1 = one - F::lit(cfg.beta1.powi(t));
    let corr2 = one - F::lit(cfg.beta2.powi(t));
    let lr = F::lit(cfg.lr);
    let eps = F::lit(cfg.epsilon);

    for (k, p) in params.values_mut().iter_mut().enumerate() {
        Zip::from(p)
            .and(&grads.values[k])
            .and(&mut state.first_moment[k])
            .and(&mut state.second_moment[k])
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}
