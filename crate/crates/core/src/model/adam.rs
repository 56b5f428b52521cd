use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl AdamState {
    pub fn new(n_params: usize, base_lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr`. Entries flagged in
/// `frozen` keep their value and moments untouched. A non-finite gradient
/// aborts before anything is modified.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, frozen: Option<&[bool]>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || frozen.is_some_and(|f| f.len() != params.len()) {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        if frozen.is_some_and(|f| f[i]) {
            continue;
        }
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// `base_lr * (1 - step / total_steps)^power`.
pub fn poly_decay_lr(base_lr: f64, step: u64, total_steps: u64, power: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::config("total_steps", "must be positive"));
    }
    if step > total_steps {
        return Err(Error::InvalidInput(format!("step {step} beyond total {total_steps}")));
    }
    if !(power > 0.0) {
        return Err(Error::config("lr_power", "must be positive"));
    }
    Ok(base_lr * (1.0 - step as f64 / total_steps as f64).powf(power))
}
