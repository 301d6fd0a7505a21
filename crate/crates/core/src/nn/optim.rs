//! Adam with decoupled weight decay, plus exponential parameter averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }
}

/// One bias-corrected Adam update. Weight decay is decoupled: it shrinks the
/// parameters directly and never enters the moment estimates.
pub fn adam_step(
    params: &ParamVector,
    grads: &[f64],
    state: &AdamState,
) -> Result<(ParamVector, AdamState)> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }

    let mut next = state.clone();
    next.step = state.step + 1;
    let t = next.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let mut out = params.clone();
    let values = out.values_mut();
    for i in 0..grads.len() {
        let g = grads[i];
        next.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        next.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        let m_hat = next.first_moment[i] / bc1;
        let v_hat = next.second_moment[i] / bc2;
        values[i] -= state.lr * (m_hat / (v_hat.sqrt() + state.eps) + state.weight_decay * values[i]);
    }
    Ok((out, next))
}

/// Exponential moving average of a parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmaState {
    pub shadow: Vec<f64>,
    pub decay: f64,
}

impl EmaState {
    pub fn new(params: &ParamVector, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidConfig(format!(
                "ema decay must lie in [0, 1], got {decay}"
            )));
        }
        Ok(Self {
            shadow: params.values().to_vec(),
            decay,
        })
    }

    pub fn shadow_params(&self) -> ParamVector {
        let mut p = ParamVector::zeros(self.shadow.len());
        p.values_mut().copy_from_slice(&self.shadow);
        p
    }
}

/// `shadow <- decay * shadow + (1 - decay) * params`.
pub fn ema_update(state: &EmaState, params: &ParamVector) -> EmaState {
    debug_assert_eq!(state.shadow.len(), params.len());
    let mut next = state.clone();
    for (s, &p) in next.shadow.iter_mut().zip(params.values()) {
        *s = state.decay * *s + (1.0 - state.decay) * p;
    }
    next
}

#[cfg(test)]
impl ParamVector {
    /// Test helper: wrap raw values without a spec length check.
    pub(crate) fn from_values_raw(values: Vec<f64>) -> Self {
        let mut p = ParamVector::zeros(values.len());
        p.values_mut().copy_from_slice(&values);
        p
    }
}
