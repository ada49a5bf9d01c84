use rand::seq::SliceRandom;
use rand::Rng;

use super::returns::{compute_returns_and_advantages, discounted_returns};
use super::Hyperparameters;
use crate::autodiff::{adam_step, tape_mean_entropy, AdamState, Mlp, ParameterVector, PerSampleFactors, Tape};
use crate::error::{Error, Result};
use crate::game::Action;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DilemmaStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// One agent's on-policy batch.
#[derive(Debug, Clone, Copy)]
pub struct DilemmaBatch<'a> {
    /// Row-major `T × input`.
    pub obs: &'a [f64],
    pub actions: &'a [Action],
    pub log_probs: &'a [f64],
    pub values: &'a [f64],
    pub rewards: &'a [f64],
}

impl DilemmaBatch<'_> {
    fn check(&self, input: usize) -> Result<usize> {
        let n = self.actions.len();
        if n == 0 {
            return Err(Error::Empty("dilemma batch"));
        }
        for (context, got) in [
            ("batch observations", self.obs.len() / input.max(1)),
            ("batch log-probabilities", self.log_probs.len()),
            ("batch values", self.values.len()),
            ("batch rewards", self.rewards.len()),
        ] {
            if got != n {
                return Err(Error::Dimension {
                    context,
                    expected: n,
                    got,
                });
            }
        }
        Ok(n)
    }
}

fn action_indices(actions: &[Action]) -> Vec<usize> {
    actions.iter().map(|a| a.index()).collect()
}

fn gather_rows(src: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&src[r * width..(r + 1) * width]);
    }
    out
}

/// Clipped-surrogate PPO over one trajectory; returns `θ̂` and loss stats.
pub fn dilemma_update<R: Rng>(
    net: &Mlp,
    params: &ParameterVector,
    opt: &mut AdamState,
    batch: &DilemmaBatch<'_>,
    hyper: &Hyperparameters,
    entropy_weight: f64,
    rng: &mut R,
) -> Result<(ParameterVector, DilemmaStats)> {
    let input = net.spec().input;
    let n = batch.check(input)?;
    let ret = compute_returns_and_advantages(batch.rewards, batch.values, 0.0, hyper.gamma, hyper.gae_lambda)?;
    let acts = action_indices(batch.actions);
    let mut theta = params.clone();
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = DilemmaStats::default();
    let mut count = 0.0;
    let (clip, vclip) = (hyper.ppo_clip, hyper.value_clip);
    for _ in 0..hyper.ppo_epochs {
        order.shuffle(rng);
        for mb in order.chunks(hyper.minibatch_size) {
            let m = mb.len();
            tape.reset();
            let obs = gather_rows(batch.obs, input, mb);
            let fwd = net.forward_tape(&mut tape, &theta, &obs, m)?;
            let lp = tape.log_softmax(fwd.logits);
            let mb_acts: Vec<usize> = mb.iter().map(|&r| acts[r]).collect();
            let logp = tape.gather(lp, &mb_acts);
            let pick = |v: &[f64]| mb.iter().map(|&r| v[r]).collect::<Vec<f64>>();
            let old_lp = tape.leaf(m, 1, &pick(batch.log_probs));
            let adv = tape.leaf(m, 1, &pick(&ret.normalized));
            let targets = tape.leaf(m, 1, &pick(&ret.returns));
            let old_v = tape.leaf(m, 1, &pick(batch.values));

            let diff = tape.sub(logp, old_lp);
            let ratio = tape.exp(diff);
            let s1 = tape.mul(ratio, adv);
            let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
            let s2 = tape.mul(clipped, adv);
            let surr = tape.min(s1, s2);
            let surr_mean = tape.mean(surr);
            let policy_loss = tape.scale(surr_mean, -1.0);

            let dv = tape.sub(fwd.value, old_v);
            let dv_c = tape.clamp(dv, -vclip, vclip);
            let v_c = tape.add(old_v, dv_c);
            let e1 = tape.sub(fwd.value, targets);
            let l1 = tape.square(e1);
            let e2 = tape.sub(v_c, targets);
            let l2 = tape.square(e2);
            let lmax = tape.max(l1, l2);
            let lmean = tape.mean(lmax);
            let value_loss = tape.scale(lmean, 0.5);

            let entropy = tape_mean_entropy(&mut tape, lp);

            let weighted_v = tape.scale(value_loss, hyper.vf_coef);
            let weighted_h = tape.scale(entropy, -entropy_weight);
            let partial = tape.add(policy_loss, weighted_v);
            let loss = tape.add(partial, weighted_h);

            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: "dilemma update",
                    detail: format!("loss = {lv}"),
                });
            }
            stats.policy_loss += tape.scalar(policy_loss);
            stats.value_loss += tape.scalar(value_loss);
            stats.entropy += tape.scalar(entropy);
            stats.clip_fraction += tape
                .value(ratio)
                .iter()
                .filter(|r| (*r - 1.0).abs() > clip)
                .count() as f64
                / m as f64;
            count += 1.0;

            tape.backward(loss, 1.0)?;
            let grad = net.gradient(&tape, &fwd);
            adam_step(&mut theta, &grad, opt)?;
        }
    }
    if count > 0.0 {
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.entropy /= count;
        stats.clip_fraction /= count;
    }
    Ok((theta, stats))
}

/// Per-row factors of `∇θ log π_θ(a_t | o_t)` for every row of a batch.
pub fn log_prob_factors(
    net: &Mlp,
    params: &ParameterVector,
    obs: &[f64],
    actions: &[Action],
) -> Result<PerSampleFactors> {
    let mut tape = Tape::new();
    let fwd = net.forward_tape(&mut tape, params, obs, actions.len())?;
    let lp = tape.log_softmax(fwd.logits);
    let picked = tape.gather(lp, &action_indices(actions));
    let total = tape.sum(picked);
    tape.backward(total, 1.0)?;
    Ok(net.per_sample_factors(&tape, &fwd))
}

/// `θ̂ = θ + λ Σ_t ∇θ log π_θ(a_t | o_t) G_t`.
pub fn reinforce_update(
    net: &Mlp,
    params: &ParameterVector,
    obs: &[f64],
    actions: &[Action],
    rewards: &[f64],
    gamma: f64,
    lr: f64,
) -> Result<ParameterVector> {
    let n = actions.len();
    if n == 0 {
        return Err(Error::Empty("dilemma batch"));
    }
    if rewards.len() != n {
        return Err(Error::Dimension {
            context: "batch rewards",
            expected: n,
            got: rewards.len(),
        });
    }
    let g = discounted_returns(rewards, gamma);
    let mut tape = Tape::new();
    let fwd = net.forward_tape(&mut tape, params, obs, n)?;
    let lp = tape.log_softmax(fwd.logits);
    let picked = tape.gather(lp, &action_indices(actions));
    tape.backward_seeded(picked, &g)?;
    let grad = net.gradient(&tape, &fwd);
    if let Some(i) = grad.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient {
            block: grad.layout().block_of(i).name.clone(),
        });
    }
    let mut theta = params.clone();
    theta.axpy(lr, &grad);
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Head, MlpSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Mlp, ParameterVector, Vec<f64>, Vec<Action>) {
        let net = Mlp::new(MlpSpec {
            input: 3,
            outputs: 2,
            head: Head::Softmax,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = net.init(&mut rng);
        let obs: Vec<f64> = (0..8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let acts = (0..8).map(|i| Action::from_index(i % 2)).collect();
        (net, p, obs, acts)
    }

    fn batch_logps(net: &Mlp, p: &ParameterVector, obs: &[f64], acts: &[Action]) -> (Vec<f64>, Vec<f64>) {
        let mut lps = Vec::new();
        let mut vals = Vec::new();
        for (t, a) in acts.iter().enumerate() {
            let out = net.forward(p, &obs[t * 3..(t + 1) * 3]).unwrap();
            lps.push(out.probabilities(Head::Softmax)[a.index()].ln());
            vals.push(out.value);
        }
        (lps, vals)
    }

    #[test]
    fn constant_rewards_with_zero_entropy_leave_policy_head_fixed() {
        let (net, p, obs, acts) = setup();
        let (lps, vals) = batch_logps(&net, &p, &obs, &acts);
        // equal rewards and zero values give zero normalised advantages
        let rewards = vec![0.0; 8];
        let zero_vals = vec![0.0; 8];
        let batch = DilemmaBatch {
            obs: &obs,
            actions: &acts,
            log_probs: &lps,
            values: &zero_vals,
            rewards: &rewards,
        };
        let hyper = Hyperparameters::default();
        let mut opt = AdamState::new(p.len(), 1e-2, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (theta, _) = dilemma_update(&net, &p, &mut opt, &batch, &hyper, 0.0, &mut rng).unwrap();
        assert_eq!(theta.block("policy.weight"), p.block("policy.weight"));
        assert_eq!(theta.block("policy.bias"), p.block("policy.bias"));
        // the value path still moves because values are off target
        let _ = vals;
        let rewards = vec![1.0; 8];
        let batch = DilemmaBatch {
            rewards: &rewards,
            ..batch
        };
        let mut opt = AdamState::new(p.len(), 1e-2, 1000);
        let (theta, _) = dilemma_update(&net, &p, &mut opt, &batch, &hyper, 0.0, &mut rng).unwrap();
        assert_ne!(theta.block("value.weight"), p.block("value.weight"));
    }

    #[test]
    fn ppo_raises_probability_of_rewarded_action() {
        let (net, mut p, obs, acts) = setup();
        let hyper = Hyperparameters::default();
        let mut opt = AdamState::new(p.len(), 3e-3, 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rewards: Vec<f64> = acts.iter().map(|a| if a.is_cooperate() { 1.0 } else { 0.0 }).collect();
        let before = net.forward(&p, &obs[..3]).unwrap().probabilities(Head::Softmax)[0];
        for _ in 0..20 {
            let (lps, vals) = batch_logps(&net, &p, &obs, &acts);
            let batch = DilemmaBatch {
                obs: &obs,
                actions: &acts,
                log_probs: &lps,
                values: &vals,
                rewards: &rewards,
            };
            p = dilemma_update(&net, &p, &mut opt, &batch, &hyper, 0.0, &mut rng).unwrap().0;
        }
        let after = net.forward(&p, &obs[..3]).unwrap().probabilities(Head::Softmax)[0];
        assert!(after > before + 0.05, "{before} -> {after}");
    }

    #[test]
    fn reinforce_matches_finite_difference_direction() {
        let (net, p, obs, acts) = setup();
        let rewards = [1.0, -0.5, 2.0, 0.0, 0.3, -1.0, 0.7, 0.1];
        let lr = 1e-3;
        let theta = reinforce_update(&net, &p, &obs, &acts, &rewards, 0.9, lr).unwrap();
        // objective Σ_t log π(a_t|o_t) G_t with G held fixed
        let g = discounted_returns(&rewards, 0.9);
        let objective = |q: &ParameterVector| {
            let (lps, _) = batch_logps(&net, q, &obs, &acts);
            lps.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut delta = theta.clone();
        delta.axpy(-1.0, &p);
        let eps = 1e-6;
        for i in [0usize, 40, 200, p.len() - 3, p.len() - 40] {
            let mut a = p.clone();
            let mut b = p.clone();
            a.as_mut_slice()[i] += eps;
            b.as_mut_slice()[i] -= eps;
            let fd = (objective(&a) - objective(&b)) / (2.0 * eps);
            assert!((delta.as_slice()[i] - lr * fd).abs() < 1e-9, "index {i}");
        }
    }

    #[test]
    fn log_prob_factors_rows_match_gradient_sum() {
        let (net, p, obs, acts) = setup();
        let f = log_prob_factors(&net, &p, &obs, &acts).unwrap();
        let mut total = ParameterVector::zeros(net.layout().clone());
        for r in 0..acts.len() {
            total.axpy(1.0, &f.row_gradient(net.layout(), r));
        }
        let ones = vec![1.0; acts.len()];
        let step = reinforce_update(&net, &p, &obs, &acts, &ones, 0.0, 1.0).unwrap();
        let mut diff = step.clone();
        diff.axpy(-1.0, &p);
        for (a, b) in diff.as_slice().iter().zip(total.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
