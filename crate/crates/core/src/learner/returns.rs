use crate::error::{Error, Result};

/// `β r + P (1 − β) r`.
pub fn reshape_reward(r_env: f64, reputation: f64, beta: f64) -> f64 {
    beta * r_env + reputation * (1.0 - beta) * r_env
}

/// `G_t = Σ_{l ≥ t} γ^{l−t} r_l`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    /// Value targets: raw advantages plus values.
    pub returns: Vec<f64>,
    /// Raw GAE advantages.
    pub advantages: Vec<f64>,
    /// Zero-mean, unit-variance advantages used by the surrogate.
    pub normalized: Vec<f64>,
}

const NORM_EPS: f64 = 1e-8;

/// GAE(γ, λ) over one trajectory with bootstrap value `V_T`.
pub fn compute_returns_and_advantages(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    gae_lambda: f64,
) -> Result<Returns> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::Empty("trajectory"));
    }
    if values.len() != n {
        return Err(Error::Dimension {
            context: "value estimates",
            expected: n,
            got: values.len(),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * gae_lambda * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let normalized = advantages.iter().map(|a| (a - mean) / (std + NORM_EPS)).collect();
    Ok(Returns {
        returns,
        advantages,
        normalized,
    })
}
