use std::collections::BTreeMap;

use super::{EvalOptimizer, Hyperparameters};
use crate::autodiff::{adam_step, sigmoid, AdamState, Mlp, ParameterVector, Tape};
use crate::error::{Error, Result};

/// Per-neighbour evaluation reward `r_ij − mean_k r_ik`.
pub fn evaluation_reward(per_neighbour: &[f64]) -> Result<Vec<f64>> {
    if per_neighbour.is_empty() {
        return Err(Error::Empty("neighbour reward list"));
    }
    let mean = per_neighbour.iter().sum::<f64>() / per_neighbour.len() as f64;
    Ok(per_neighbour.iter().map(|r| r - mean).collect())
}

/// Disagreement of one assessor with its neighbours' other assessors.
///
/// `own[s]` is the assessor's probability for its `s`-th neighbour and
/// `peers[s]` lists every probability that neighbour received in the same
/// round. Returns the penalty and its gradient with respect to `own`.
pub fn disagreement_penalty(own: &[f64], peers: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    if own.len() != peers.len() {
        return Err(Error::Dimension {
            context: "disagreement peers",
            expected: own.len(),
            got: peers.len(),
        });
    }
    let mut d = 0.0;
    let mut grad = vec![0.0; own.len()];
    for (s, (&p, others)) in own.iter().zip(peers).enumerate() {
        for &q in others.iter() {
            d += (p - q) * (p - q);
            grad[s] += 2.0 * (p - q);
        }
    }
    Ok((d, grad))
}

/// What one neighbour's learning step exposes to its assessors.
#[derive(Debug, Clone, Copy)]
pub struct NeighbourTrace<'a> {
    /// `K[t][s] = ⟨∇θ log π_θ(a_t|o_t), ∇θ̂ log π_θ̂(â_s|ô_s)⟩`, original
    /// trajectory rows by cross-validation rows.
    pub gram: &'a [Vec<f64>],
    /// Neighbour's environmental reward on the original trajectory.
    pub env_rewards: &'a [f64],
    pub beta: f64,
    /// Number of assessors feeding the neighbour's reputation.
    pub degree: usize,
}

/// One assessed neighbour as seen from the assessor.
#[derive(Debug, Clone)]
pub struct ChainTarget<'a> {
    pub trace: Option<NeighbourTrace<'a>>,
    /// Evaluation reward the assessor earned against this neighbour on the
    /// cross-validation trajectory (zero on steps they did not meet).
    pub eval_rewards: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ChainParams {
    pub gamma: f64,
    pub alpha: f64,
    pub mu: f64,
    /// Step size of the differentiated one-step neighbour update.
    pub shaping_lr: f64,
}

/// `G'_s = Σ_{l ≥ s} γ^{l−s} (r_l − μ D_l)`.
pub fn evaluation_return(eval_rewards: &[f64], disagreement: &[f64], gamma: f64, mu: f64) -> Vec<f64> {
    let mut out = vec![0.0; eval_rewards.len()];
    let mut acc = 0.0;
    for s in (0..eval_rewards.len()).rev() {
        acc = eval_rewards[s] - mu * disagreement[s] + gamma * acc;
        out[s] = acc;
    }
    out
}

/// Weights `W[u]` such that the neighbour-learning part of the evaluation
/// gradient is `Σ_u W[u] ∇η p_u`, where `p_u` is the assessor's probability
/// for this neighbour at original-trajectory step `u`.
///
/// `returns` is the (baselined) evaluation return on the cross-validation
/// trajectory.
pub fn chain_weights(trace: &NeighbourTrace<'_>, returns: &[f64], params: ChainParams) -> Result<Vec<f64>> {
    let t_len = trace.env_rewards.len();
    if trace.gram.len() != t_len {
        return Err(Error::Dimension {
            context: "gram rows",
            expected: t_len,
            got: trace.gram.len(),
        });
    }
    if let Some(row) = trace.gram.iter().find(|r| r.len() != returns.len()) {
        return Err(Error::Dimension {
            context: "gram columns",
            expected: returns.len(),
            got: row.len(),
        });
    }
    // c_t: sensitivity of the objective to the neighbour's return at t
    let c: Vec<f64> = trace
        .gram
        .iter()
        .map(|row| params.shaping_lr * row.iter().zip(returns).map(|(k, g)| k * g).sum::<f64>())
        .collect();
    let kappa = (1.0 - trace.beta) * (1.0 - params.alpha) / trace.degree as f64;
    // E_l = r_l Σ_{t ≤ l} γ^{l−t} c_t
    let mut e = vec![0.0; t_len];
    let mut acc = 0.0;
    for l in 0..t_len {
        acc = params.gamma * acc + c[l];
        e[l] = trace.env_rewards[l] * acc;
    }
    // W_u = κ Σ_{l ≥ u} α^{l−u} E_l
    let mut w = vec![0.0; t_len];
    let mut acc = 0.0;
    for u in (0..t_len).rev() {
        acc = e[u] + params.alpha * acc;
        w[u] = kappa * acc;
    }
    Ok(w)
}

/// Inputs of one assessor's evaluation update.
#[derive(Debug, Clone)]
pub struct EvalUpdateInput<'a> {
    /// Row-major `T × input` evaluation observations on the original trajectory.
    pub eval_obs: &'a [f64],
    /// `T × deg` neighbour indices the assessor rated.
    pub assessed: &'a [usize],
    /// `D_t` on the original trajectory.
    pub disagreement: &'a [f64],
    /// `T × deg` gradient of `D_t` with respect to the assessor's probabilities.
    pub disagreement_grad: &'a [f64],
    /// Every neighbour rated at least once, keyed by agent index. Empty when
    /// no neighbour's reward depends on reputation.
    pub targets: BTreeMap<usize, ChainTarget<'a>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalStats {
    pub grad_norm: f64,
    pub disagreement: f64,
    pub baseline_loss: f64,
}

/// Ascent step on the evaluation parameters.
///
/// Builds one weighted backward pass through the evaluation network:
/// neighbour-learning weights from [`chain_weights`], the direct
/// `−μ Σ γ^t ∇D_t` term, and (optionally) a squared-error fit of the value
/// head to the mean evaluation return, which then serves as the baseline.
pub fn evaluation_update(
    net: &Mlp,
    params: &ParameterVector,
    opt: &mut AdamState,
    hyper: &Hyperparameters,
    shaping_lr: f64,
    input: &EvalUpdateInput<'_>,
) -> Result<(ParameterVector, EvalStats)> {
    let t_len = input.disagreement.len();
    let deg = net.spec().outputs;
    if input.assessed.len() != t_len * deg || input.disagreement_grad.len() != t_len * deg {
        return Err(Error::Dimension {
            context: "evaluation update inputs",
            expected: t_len * deg,
            got: input.assessed.len(),
        });
    }
    let mut tape = Tape::new();
    let fwd = net.forward_tape(&mut tape, params, input.eval_obs, t_len)?;
    let logits = tape.value(fwd.logits).to_vec();
    let values = tape.value(fwd.value).to_vec();

    let chain = ChainParams {
        gamma: hyper.gamma,
        alpha: hyper.alpha,
        mu: hyper.mu,
        shaping_lr,
    };
    let mut p_seeds = vec![0.0; t_len * deg];
    let mut v_seeds = vec![0.0; t_len];
    let mut baseline_loss = 0.0;
    if !input.targets.is_empty() {
        let raw: Vec<(usize, Vec<f64>)> = input
            .targets
            .iter()
            .map(|(&j, tgt)| (j, evaluation_return(&tgt.eval_rewards, input.disagreement, hyper.gamma, hyper.mu)))
            .collect();
        if hyper.eval_baseline {
            for (s, seed) in v_seeds.iter_mut().enumerate() {
                let target = raw.iter().map(|(_, g)| g[s]).sum::<f64>() / raw.len() as f64;
                let err = values[s] - target;
                baseline_loss += 0.5 * err * err / t_len as f64;
                *seed = -err / t_len as f64;
            }
        }
        for (j, g) in &raw {
            let tgt = &input.targets[j];
            let trace = tgt
                .trace
                .as_ref()
                .ok_or_else(|| Error::MissingIntermediates(format!("neighbour {j}")))?;
            let returns: Vec<f64> = if hyper.eval_baseline {
                g.iter().zip(&values).map(|(a, b)| a - b).collect()
            } else {
                g.clone()
            };
            let w = chain_weights(trace, &returns, chain)?;
            for u in 0..t_len {
                for s in 0..deg {
                    if input.assessed[u * deg + s] == *j {
                        p_seeds[u * deg + s] += w[u];
                    }
                }
            }
        }
    }
    let mut discount = 1.0;
    for u in 0..t_len {
        for s in 0..deg {
            p_seeds[u * deg + s] -= hyper.mu * discount * input.disagreement_grad[u * deg + s];
        }
        discount *= hyper.gamma;
    }
    // dp/dz = p (1 − p)
    let z_seeds: Vec<f64> = p_seeds
        .iter()
        .zip(&logits)
        .map(|(w, &z)| {
            let p = sigmoid(z);
            w * p * (1.0 - p)
        })
        .collect();
    let zw = tape.leaf(t_len, deg, &z_seeds);
    let vw = tape.leaf(t_len, 1, &v_seeds);
    let zprod = tape.mul(fwd.logits, zw);
    let zsum = tape.sum(zprod);
    let vprod = tape.mul(fwd.value, vw);
    let vsum = tape.sum(vprod);
    let objective = tape.add(zsum, vsum);
    tape.backward(objective, 1.0)?;
    let f = net.gradient(&tape, &fwd);

    let mut eta = params.clone();
    match hyper.eval_optimizer {
        EvalOptimizer::Adam => {
            let mut descent = f.clone();
            descent.as_mut_slice().iter_mut().for_each(|x| *x = -*x);
            adam_step(&mut eta, &descent, opt)?;
        }
        EvalOptimizer::Sgd => {
            if let Some(i) = f.as_slice().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: f.layout().block_of(i).name.clone(),
                });
            }
            let lr = opt.effective_lr();
            opt.step += 1;
            eta.axpy(lr, &f);
        }
    }
    Ok((
        eta,
        EvalStats {
            grad_norm: f.norm(),
            disagreement: input.disagreement.iter().sum::<f64>() / t_len.max(1) as f64,
            baseline_loss,
        },
    ))
}
