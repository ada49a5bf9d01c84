use serde::{Deserialize, Serialize};

use super::mlp::ParameterVector;
use crate::error::{Error, Result};

/// Adam with bias correction and a learning rate annealed linearly to zero
/// over `horizon` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub base_lr: f64,
    pub horizon: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, base_lr: f64, horizon: u64) -> Self {
        AdamState {
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
            base_lr,
            horizon,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `λ · max(0, 1 − step / horizon)` for the current step counter.
    pub fn effective_lr(&self) -> f64 {
        annealed_lr(self.base_lr, self.step, self.horizon)
    }
}

pub fn annealed_lr(base: f64, step: u64, horizon: u64) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    base * (1.0 - step as f64 / horizon as f64).max(0.0)
}

/// Descent step `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut ParameterVector, grads: &ParameterVector, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::Dimension {
            context: "adam step",
            expected: params.len(),
            got: grads.len(),
        });
    }
    if let Some(i) = grads.as_slice().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            block: grads.layout().block_of(i).name.clone(),
        });
    }
    let lr = state.effective_lr();
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let p = params.as_mut_slice();
    for (i, &g) in grads.as_slice().iter().enumerate() {
        let m = b1 * state.first[i] + (1.0 - b1) * g;
        let v = b2 * state.second[i] + (1.0 - b2) * g * g;
        state.first[i] = m;
        state.second[i] = v;
        if lr > 0.0 {
            p[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
    }
    Ok(())
}
