use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;

use super::dilemma::{dilemma_update, log_prob_factors, reinforce_update, DilemmaBatch, DilemmaStats};
use super::evaluation::{
    disagreement_penalty, evaluation_reward, evaluation_update, ChainTarget, EvalStats, EvalUpdateInput, NeighbourTrace,
};
use super::returns::reshape_reward;
use super::{AssessmentMode, DilemmaRule, Hyperparameters};
use crate::arena::{AgentState, Variant};
use crate::autodiff::{annealed_lr, AdamState, Mlp, ParameterVector, Scratch};
use crate::error::{Error, Result};
use crate::game::{pairwise_payoff, Action, PayoffMatrix};
use crate::parallel::Executor;
use crate::reputation::{assess_learned, assess_norm, binarize, reverse_slots, update_reputation, AssessmentRound};
use crate::rng::{derive_seed, stream, Purpose};
use crate::topology::{Adjacency, NeighborGraph};

const PHASE_ROLLOUT: u64 = 0;
const PHASE_CROSS: u64 = 1;

/// `[P_own, P_neighbour_0, …]` in neighbour-list order.
pub fn dilemma_observation(own: f64, neighbours: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(neighbours.len() + 1);
    v.push(own);
    v.extend_from_slice(neighbours);
    v
}

/// One agent's record of an episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    /// Row-major `T × input`.
    pub dilemma_obs: Vec<f64>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// `T × deg` neighbour indices.
    pub neighbours: Vec<usize>,
    /// `T × deg` pairwise payoffs.
    pub env_per_neighbour: Vec<f64>,
    pub env_rewards: Vec<f64>,
    /// Reputation after each step's update.
    pub reputation: Vec<f64>,
    /// Reshaped reward.
    pub rewards: Vec<f64>,
    /// Row-major `T × 2 deg`; empty without a learned evaluator.
    pub eval_obs: Vec<f64>,
    /// `T × deg` assessments given; empty for agents that do not assess.
    pub assess_probs: Vec<f64>,
    pub assess_bits: Vec<u8>,
    pub beta: f64,
}

pub struct EpisodeContext<'a> {
    pub graph: &'a NeighborGraph,
    pub payoff: PayoffMatrix,
    pub hyper: &'a Hyperparameters,
    pub timesteps: usize,
    pub dilemma_net: &'a Mlp,
    pub eval_net: Option<&'a Mlp>,
    pub seed: u64,
    pub arena: u64,
    pub episode: u64,
    pub total_episodes: u64,
    pub exec: &'a Executor,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub trajectories: Vec<Trajectory>,
    /// Fraction of cooperators per step.
    pub cooperation: Vec<f64>,
    pub dilemma_stats: Vec<DilemmaStats>,
    pub eval_stats: Vec<Option<EvalStats>>,
}

impl EpisodeOutput {
    pub fn mean_cooperation(&self) -> f64 {
        self.cooperation.iter().sum::<f64>() / self.cooperation.len().max(1) as f64
    }
}

struct Rollout<'g> {
    trajs: Vec<Trajectory>,
    rounds: Vec<AssessmentRound>,
    adjs: Vec<Cow<'g, Adjacency>>,
    revs: Vec<Vec<usize>>,
    cooperation: Vec<f64>,
}

fn rollout<'g>(
    ctx: &EpisodeContext<'g>,
    agents: &[AgentState],
    thetas: &[&ParameterVector],
    phase: u64,
) -> Result<Rollout<'g>> {
    let n = agents.len();
    let deg = ctx.graph.degree();
    let hyper = ctx.hyper;
    let hard = hyper.assessment_mode == AssessmentMode::Hard;
    let tags = [ctx.arena, ctx.episode, phase];
    let mut start = stream(ctx.seed, Purpose::EpisodeStart, &tags);
    let mut rep: Vec<f64> = (0..n).map(|_| start.gen::<f64>()).collect();
    let mut last: Vec<Action> = (0..n)
        .map(|_| if start.gen::<bool>() { Action::Cooperate } else { Action::Defect })
        .collect();
    let mut received: Vec<f64> = (0..n * deg).map(|k| rep[k / deg]).collect();
    let betas: Vec<f64> = agents.iter().map(|a| a.variant.beta(hyper.beta)).collect();
    let uses_reputation = agents.iter().any(|a| a.variant != Variant::DirectOnly);

    let mut trajs: Vec<Trajectory> = betas
        .iter()
        .map(|&beta| Trajectory {
            beta,
            ..Default::default()
        })
        .collect();
    let mut out = Rollout {
        trajs: Vec::new(),
        rounds: Vec::with_capacity(ctx.timesteps),
        adjs: Vec::with_capacity(ctx.timesteps),
        revs: Vec::with_capacity(ctx.timesteps),
        cooperation: Vec::with_capacity(ctx.timesteps),
    };
    let fixed_rev = (!ctx.graph.resample_each_step()).then(|| reverse_slots(&ctx.graph.round(0)));

    for t in 0..ctx.timesteps {
        let step_tags = [ctx.arena, ctx.episode, phase, t as u64];
        let adj = ctx
            .graph
            .round(derive_seed(ctx.seed, &[Purpose::Matching as u64, ctx.arena, ctx.episode, phase, t as u64]));
        let rev = match &fixed_rev {
            Some(r) => r.clone(),
            None => reverse_slots(&adj),
        };

        let acts = ctx.exec.try_map(n, |i| -> Result<(Vec<f64>, Action, f64, f64)> {
            let nb = adj.neighbours(i);
            let obs: Vec<f64> = match agents[i].variant {
                Variant::DirectOnly => nb.iter().map(|&j| last[j].as_feature()).collect(),
                _ => {
                    let reps: Vec<f64> = nb.iter().map(|&j| rep[j]).collect();
                    dilemma_observation(rep[i], &reps)
                }
            };
            let mut logits = [0.0; 2];
            let mut scratch = Scratch::default();
            if obs.len() != ctx.dilemma_net.spec().input {
                return Err(Error::Dimension {
                    context: "dilemma observation",
                    expected: ctx.dilemma_net.spec().input,
                    got: obs.len(),
                });
            }
            let value = ctx.dilemma_net.forward_raw(thetas[i].as_slice(), &obs, &mut scratch, &mut logits);
            let lse = crate::autodiff::tape::log_sum_exp(&logits);
            let p_c = (logits[0] - lse).exp();
            let mut rng = stream(ctx.seed, Purpose::Act, &[step_tags[0], step_tags[1], phase, t as u64, i as u64]);
            let a = if rng.gen::<f64>() < p_c { Action::Cooperate } else { Action::Defect };
            Ok((obs, a, logits[a.index()] - lse, value))
        })?;
        let actions: Vec<Action> = acts.iter().map(|x| x.1).collect();

        let assessed = ctx.exec.try_map(n, |i| -> Result<(Vec<f64>, Vec<f64>, Vec<u8>)> {
            let nb = adj.neighbours(i);
            match agents[i].variant {
                Variant::DirectOnly => Ok((Vec::new(), Vec::new(), Vec::new())),
                Variant::Norm(norm) => {
                    let standing = binarize(rep[i]);
                    let bits: Vec<u8> = nb.iter().map(|&j| assess_norm(norm, actions[j], standing)).collect();
                    let probs = bits.iter().map(|&b| b as f64).collect();
                    Ok((Vec::new(), probs, bits))
                }
                _ => {
                    let (net, eta) = match (ctx.eval_net, agents[i].evaluation.as_ref()) {
                        (Some(net), Some(eta)) => (net, eta),
                        _ => return Err(Error::Config(format!("agent {i} has no evaluation network"))),
                    };
                    let mut eobs: Vec<f64> = nb.iter().map(|&j| actions[j].as_feature()).collect();
                    eobs.extend_from_slice(&received[i * deg..(i + 1) * deg]);
                    let mut rng = stream(ctx.seed, Purpose::Assess, &[ctx.arena, ctx.episode, phase, t as u64, i as u64]);
                    let (probs, bits) = assess_learned(net, eta, &eobs, &mut rng)?;
                    Ok((eobs, probs, bits))
                }
            }
        })?;

        let mut round = AssessmentRound::new(n, deg);
        if uses_reputation {
            for (i, (_, probs, bits)) in assessed.iter().enumerate() {
                round.set_row(i, probs, bits);
            }
            let mut buf = vec![0.0; deg];
            for j in 0..n {
                for (s, &k) in adj.neighbours(j).iter().enumerate() {
                    let slot = rev[j * deg + s];
                    buf[s] = if hard { round.bit(k, slot) as f64 } else { round.prob(k, slot) };
                }
                received[j * deg..(j + 1) * deg].copy_from_slice(&buf);
                rep[j] = update_reputation(rep[j], &buf, hyper.alpha)?;
            }
        }

        let mut coop = 0usize;
        for (i, ((obs, a, lp, v), (eobs, probs, bits))) in acts.into_iter().zip(assessed).enumerate() {
            let tr = &mut trajs[i];
            let nb = adj.neighbours(i);
            let mut env = 0.0;
            for &j in nb {
                let r = pairwise_payoff(a, actions[j], &ctx.payoff);
                tr.env_per_neighbour.push(r);
                env += r;
            }
            coop += usize::from(a.is_cooperate());
            tr.dilemma_obs.extend_from_slice(&obs);
            tr.actions.push(a);
            tr.log_probs.push(lp);
            tr.values.push(v);
            tr.neighbours.extend_from_slice(nb);
            tr.env_rewards.push(env);
            tr.reputation.push(rep[i]);
            tr.rewards.push(reshape_reward(env, rep[i], betas[i]));
            tr.eval_obs.extend_from_slice(&eobs);
            tr.assess_probs.extend_from_slice(&probs);
            tr.assess_bits.extend_from_slice(&bits);
        }
        out.cooperation.push(coop as f64 / n as f64);
        last = actions;
        out.rounds.push(round);
        out.adjs.push(adj);
        out.revs.push(rev);
    }
    out.trajs = trajs;
    Ok(out)
}

/// `D_t` and its gradient for every step of agent `i`'s rollout.
fn disagreement_trace(roll: &Rollout<'_>, i: usize, deg: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let tr = &roll.trajs[i];
    let t_len = tr.actions.len();
    let mut d = vec![0.0; t_len];
    let mut grad = vec![0.0; t_len * deg];
    for t in 0..t_len {
        let adj = &roll.adjs[t];
        let round = &roll.rounds[t];
        let rev = &roll.revs[t];
        let peers: Vec<Vec<f64>> = tr.neighbours[t * deg..(t + 1) * deg]
            .iter()
            .map(|&j| {
                adj.neighbours(j)
                    .iter()
                    .enumerate()
                    .map(|(s, &k)| round.prob(k, rev[j * deg + s]))
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = peers.iter().map(|v| v.as_slice()).collect();
        let (dt, gt) = disagreement_penalty(&tr.assess_probs[t * deg..(t + 1) * deg], &refs)?;
        d[t] = dt;
        grad[t * deg..(t + 1) * deg].copy_from_slice(&gt);
    }
    Ok((d, grad))
}

struct DilemmaResult {
    theta: ParameterVector,
    opt: AdamState,
    stats: DilemmaStats,
    factors: Option<crate::autodiff::PerSampleFactors>,
}

/// One training episode for a whole arena: rollout, dilemma updates,
/// cross-validation rollout under the updated dilemma policies, then
/// evaluation updates. Agents are updated in place.
pub fn lr2_episode(ctx: &EpisodeContext<'_>, agents: &mut [AgentState]) -> Result<EpisodeOutput> {
    let n = agents.len();
    if n != ctx.graph.n_agents() {
        return Err(Error::Dimension {
            context: "population size",
            expected: ctx.graph.n_agents(),
            got: n,
        });
    }
    let hyper = ctx.hyper;
    let deg = ctx.graph.degree();
    let net = ctx.dilemma_net;
    let thetas: Vec<&ParameterVector> = agents.iter().map(|a| &a.dilemma).collect();
    let tau = rollout(ctx, agents, &thetas, PHASE_ROLLOUT)?;

    let has_eval = agents.iter().any(|a| a.evaluation.is_some());
    // without a reputation-sensitive reward no evaluator influences any
    // neighbour's update, so the cross-validation pass would contribute zero
    let cross = has_eval && tau.trajs.iter().any(|t| t.beta < 1.0);
    let omega = hyper.entropy.weight_at(ctx.episode);
    let lr_now = annealed_lr(hyper.lr, ctx.episode, ctx.total_episodes);
    let shaping_lr = hyper.shaping_lr.unwrap_or(lr_now);

    let updates = {
        let agents = &*agents;
        let tau = &tau;
        ctx.exec.try_map(n, move |i| -> Result<DilemmaResult> {
            let tr = &tau.trajs[i];
            let agent = &agents[i];
            let factors = if cross {
                Some(log_prob_factors(net, &agent.dilemma, &tr.dilemma_obs, &tr.actions)?)
            } else {
                None
            };
            let mut opt = agent.dilemma_opt.clone();
            let (theta, stats) = match hyper.dilemma_rule {
                DilemmaRule::Ppo => {
                    let batch = DilemmaBatch {
                        obs: &tr.dilemma_obs,
                        actions: &tr.actions,
                        log_probs: &tr.log_probs,
                        values: &tr.values,
                        rewards: &tr.rewards,
                    };
                    let mut rng = stream(ctx.seed, Purpose::Minibatch, &[ctx.arena, ctx.episode, i as u64]);
                    dilemma_update(net, &agent.dilemma, &mut opt, &batch, hyper, omega, &mut rng)?
                }
                DilemmaRule::Reinforce => {
                    let theta = reinforce_update(
                        net,
                        &agent.dilemma,
                        &tr.dilemma_obs,
                        &tr.actions,
                        &tr.rewards,
                        hyper.gamma,
                        lr_now,
                    )?;
                    (theta, DilemmaStats::default())
                }
            };
            Ok(DilemmaResult {
                theta,
                opt,
                stats,
                factors,
            })
        })?
    };

    let mut eval_results: Vec<Option<(ParameterVector, AdamState, EvalStats)>> = (0..n).map(|_| None).collect();
    if has_eval {
        let eval_net = ctx
            .eval_net
            .ok_or_else(|| Error::Config("evaluation network missing".into()))?;
        let hat = if cross {
            let th: Vec<&ParameterVector> = updates.iter().map(|u| &u.theta).collect();
            Some(rollout(ctx, agents, &th, PHASE_CROSS)?)
        } else {
            None
        };
        let grams: Vec<Option<Vec<Vec<f64>>>> = match &hat {
            Some(hat) => ctx.exec.try_map(n, |j| -> Result<Option<Vec<Vec<f64>>>> {
                let htr = &hat.trajs[j];
                let h = log_prob_factors(net, &updates[j].theta, &htr.dilemma_obs, &htr.actions)?;
                Ok(updates[j].factors.as_ref().map(|g| g.gram(&h)))
            })?,
            None => vec![None; n],
        };
        let agents_ref = &*agents;
        eval_results = ctx.exec.try_map(n, |i| -> Result<Option<(ParameterVector, AdamState, EvalStats)>> {
            let agent = &agents_ref[i];
            let (eta, eopt) = match (&agent.evaluation, &agent.eval_opt) {
                (Some(e), Some(o)) => (e, o),
                _ => return Ok(None),
            };
            let tr = &tau.trajs[i];
            let t_len = tr.actions.len();
            let (dis, dgrad) = disagreement_trace(&tau, i, deg)?;
            let mut targets = BTreeMap::new();
            if let Some(hat) = &hat {
                for &j in &tr.neighbours {
                    targets.entry(j).or_insert_with(|| ChainTarget {
                        trace: grams[j].as_ref().map(|k| NeighbourTrace {
                            gram: k,
                            env_rewards: &tau.trajs[j].env_rewards,
                            beta: tau.trajs[j].beta,
                            degree: deg,
                        }),
                        eval_rewards: vec![0.0; t_len],
                    });
                }
                let htr = &hat.trajs[i];
                for s in 0..t_len {
                    let centred = evaluation_reward(&htr.env_per_neighbour[s * deg..(s + 1) * deg])?;
                    for (k, j) in htr.neighbours[s * deg..(s + 1) * deg].iter().enumerate() {
                        if let Some(tgt) = targets.get_mut(j) {
                            tgt.eval_rewards[s] += centred[k];
                        }
                    }
                }
            }
            let input = EvalUpdateInput {
                eval_obs: &tr.eval_obs,
                assessed: &tr.neighbours,
                disagreement: &dis,
                disagreement_grad: &dgrad,
                targets,
            };
            let mut opt = eopt.clone();
            let (next, stats) = evaluation_update(eval_net, eta, &mut opt, hyper, shaping_lr, &input)?;
            Ok(Some((next, opt, stats)))
        })?;
    }

    let mut dilemma_stats = Vec::with_capacity(n);
    let mut eval_stats = Vec::with_capacity(n);
    for (i, (upd, ev)) in updates.into_iter().zip(eval_results).enumerate() {
        let agent = &mut agents[i];
        agent.dilemma = upd.theta;
        agent.dilemma_opt = upd.opt;
        dilemma_stats.push(upd.stats);
        match ev {
            Some((eta, opt, st)) => {
                agent.evaluation = Some(eta);
                agent.eval_opt = Some(opt);
                eval_stats.push(Some(st));
            }
            None => eval_stats.push(None),
        }
        let tr = &tau.trajs[i];
        agent.reputation = *tr.reputation.last().unwrap_or(&agent.reputation);
        agent.last_action = *tr.actions.last().unwrap_or(&agent.last_action);
    }
    Ok(EpisodeOutput {
        trajectories: tau.trajs,
        cooperation: tau.cooperation,
        dilemma_stats,
        eval_stats,
    })
}
