//! Reverse-mode differentiation, the policy/value networks built on it, and
//! the optimiser that trains them.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod tape;

pub use adam::{adam_step, annealed_lr, AdamState};
pub use mlp::{Head, Layout, Mlp, MlpSpec, NetworkOutput, ParameterVector, PerSampleFactors, Scratch, TapeForward};
pub use tape::{sigmoid, Tape, Var};

use crate::error::{Error, Result};

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy_of(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::Distribution("empty distribution".into()));
    }
    if dist.iter().any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan()) {
        return Err(Error::Distribution(format!("entries outside [0, 1]: {dist:?}")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Distribution(format!("sums to {total}")));
    }
    Ok(-dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>())
}

/// Mean row entropy of a row-wise log-softmax node, recorded on the tape.
pub fn tape_mean_entropy(tape: &mut Tape, log_probs: Var) -> Var {
    let (rows, _) = tape.shape(log_probs);
    let p = tape.exp(log_probs);
    let plogp = tape.mul(p, log_probs);
    let s = tape.sum(plogp);
    tape.scale(s, -1.0 / rows as f64)
}
