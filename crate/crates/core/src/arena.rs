//! Populations of agents driven through episodes in independent arenas.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{AdamState, Head, Mlp, MlpSpec, ParameterVector};
use crate::error::{Error, Result};
use crate::game::{Action, PayoffMatrix};
use crate::learner::{lr2_episode, EpisodeContext, EpisodeOutput, Hyperparameters, Trajectory};
use crate::parallel::Executor;
use crate::reputation::SocialNorm;
use crate::rng::{stream, Purpose};
use crate::topology::NeighborGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lr2,
    /// Direct reciprocity: acts on neighbours' last actions, no reputation.
    DirectOnly,
    Ippo,
    Norm(SocialNorm),
    /// Learns like LR2 but always optimises the raw environmental reward.
    Adversarial,
}

impl Variant {
    /// Effective reward-mixing weight.
    pub fn beta(self, configured: f64) -> f64 {
        match self {
            Variant::Lr2 | Variant::Norm(_) => configured,
            Variant::DirectOnly | Variant::Ippo | Variant::Adversarial => 1.0,
        }
    }

    pub fn has_evaluator(self) -> bool {
        matches!(self, Variant::Lr2 | Variant::Ippo | Variant::Adversarial)
    }
}

/// Population-wide training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lr2,
    DirectOnly,
    Ippo,
    Norm(SocialNorm),
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Method::Lr2 => "lr2".into(),
            Method::DirectOnly => "dd".into(),
            Method::Ippo => "ippo".into(),
            Method::Norm(n) => format!("norm:{}", n.tag()),
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "lr2" => Some(Method::Lr2),
            "dd" => Some(Method::DirectOnly),
            "ippo" => Some(Method::Ippo),
            _ => s.strip_prefix("norm:").and_then(SocialNorm::from_tag).map(Method::Norm),
        }
    }

    fn variant(self) -> Variant {
        match self {
            Method::Lr2 => Variant::Lr2,
            Method::DirectOnly => Variant::DirectOnly,
            Method::Ippo => Variant::Ippo,
            Method::Norm(n) => Variant::Norm(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub variant: Variant,
    pub dilemma: ParameterVector,
    pub dilemma_opt: AdamState,
    pub evaluation: Option<ParameterVector>,
    pub eval_opt: Option<AdamState>,
    pub reputation: f64,
    pub last_action: Action,
}

#[derive(Debug, Clone)]
pub struct ArenaConfig {
    pub n_arenas: usize,
    pub episodes: u64,
    pub timesteps: usize,
    pub seed: u64,
    pub workers: usize,
    pub learners: usize,
}

impl ArenaConfig {
    pub fn total_steps(&self) -> u64 {
        self.episodes * self.timesteps as u64
    }
}

#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub method: Method,
    pub hyper: Hyperparameters,
    pub payoff: PayoffMatrix,
    /// Fraction of LR2 agents replaced by adversarial ones.
    pub adversarial_fraction: f64,
}

/// Networks shared (by shape, not parameters) across a population.
#[derive(Debug, Clone)]
pub struct Networks {
    pub dilemma: Mlp,
    pub evaluation: Option<Mlp>,
}

impl Networks {
    pub fn for_method(method: Method, degree: usize) -> Self {
        let input = match method {
            Method::DirectOnly => degree,
            _ => degree + 1,
        };
        let dilemma = Mlp::new(MlpSpec {
            input,
            outputs: 2,
            head: Head::Softmax,
        });
        let evaluation = matches!(method, Method::Lr2 | Method::Ippo).then(|| {
            Mlp::new(MlpSpec {
                input: 2 * degree,
                outputs: degree,
                head: Head::Sigmoid,
            })
        });
        Networks { dilemma, evaluation }
    }
}

fn dilemma_steps_per_episode(hyper: &Hyperparameters, timesteps: usize) -> u64 {
    (hyper.ppo_epochs * timesteps.div_ceil(hyper.minibatch_size)) as u64
}

/// Fresh agents for one arena. Initial reputations and forced actions come
/// from the same stream the first episode draws from.
pub fn init_population(
    config: &ArenaConfig,
    method: &MethodConfig,
    nets: &Networks,
    n_agents: usize,
    arena: u64,
) -> Result<Vec<AgentState>> {
    let mut variants = vec![method.method.variant(); n_agents];
    if method.adversarial_fraction > 0.0 {
        if method.method != Method::Lr2 {
            return Err(Error::Config("adversarial agents require method lr2".into()));
        }
        let count = (method.adversarial_fraction * n_agents as f64).round() as usize;
        let mut idx: Vec<usize> = (0..n_agents).collect();
        idx.shuffle(&mut stream(config.seed, Purpose::Adversary, &[arena]));
        for &i in idx.iter().take(count) {
            variants[i] = Variant::Adversarial;
        }
    }
    let mut start = stream(config.seed, Purpose::EpisodeStart, &[arena, 0, 0]);
    let reps: Vec<f64> = (0..n_agents).map(|_| start.gen::<f64>()).collect();
    let acts: Vec<Action> = (0..n_agents)
        .map(|_| if start.gen::<bool>() { Action::Cooperate } else { Action::Defect })
        .collect();
    let hyper = &method.hyper;
    let d_horizon = config.episodes * dilemma_steps_per_episode(hyper, config.timesteps);
    Ok((0..n_agents)
        .map(|i| {
            let dilemma = nets.dilemma.init(&mut stream(config.seed, Purpose::Init, &[arena, i as u64, 0]));
            let evaluation = nets
                .evaluation
                .as_ref()
                .map(|net| net.init(&mut stream(config.seed, Purpose::Init, &[arena, i as u64, 1])));
            AgentState {
                variant: variants[i],
                dilemma_opt: AdamState::new(dilemma.len(), hyper.lr, d_horizon),
                eval_opt: evaluation.as_ref().map(|e| AdamState::new(e.len(), hyper.eval_lr.unwrap_or(hyper.lr), config.episodes)),
                dilemma,
                evaluation,
                reputation: reps[i],
                last_action: acts[i],
            }
        })
        .collect())
}

/// Fraction of cooperators.
pub fn measure_cooperation(actions: &[Action]) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    actions.iter().filter(|a| a.is_cooperate()).count() as f64 / actions.len() as f64
}

/// Conditional means at one step; `None` marks an empty conditional.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub reward_c: Option<f64>,
    pub reward_d: Option<f64>,
    pub reputation_c: Option<f64>,
    pub reputation_d: Option<f64>,
}

fn cond_mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Per-step reward and reputation means conditioned on the action taken.
pub fn strategy_conditioned_stats(trajs: &[Trajectory]) -> Vec<StepStats> {
    let t_len = trajs.iter().map(|t| t.actions.len()).max().unwrap_or(0);
    (0..t_len)
        .map(|t| {
            let (mut rc, mut rd, mut pc, mut pd, mut nc, mut nd) = (0.0, 0.0, 0.0, 0.0, 0, 0);
            for tr in trajs.iter().filter(|tr| t < tr.actions.len()) {
                if tr.actions[t].is_cooperate() {
                    rc += tr.rewards[t];
                    pc += tr.reputation[t];
                    nc += 1;
                } else {
                    rd += tr.rewards[t];
                    pd += tr.reputation[t];
                    nd += 1;
                }
            }
            StepStats {
                reward_c: cond_mean(rc, nc),
                reward_d: cond_mean(rd, nd),
                reputation_c: cond_mean(pc, nc),
                reputation_d: cond_mean(pd, nd),
            }
        })
        .collect()
}

/// Everything observers see after an episode commits.
pub struct EpisodeReport<'a> {
    pub episode: u64,
    /// One output per arena.
    pub arenas: &'a [EpisodeOutput],
    pub agents: &'a [Vec<AgentState>],
}

pub struct TrainingResult {
    pub arenas: Vec<Vec<AgentState>>,
    /// Arena-averaged episode cooperation.
    pub cooperation: Vec<f64>,
}

/// Trains every arena for `config.episodes` episodes, calling `observe`
/// after each episode barrier.
pub fn run_training(
    config: &ArenaConfig,
    method: &MethodConfig,
    graph: &NeighborGraph,
    observe: &mut dyn FnMut(&EpisodeReport<'_>) -> Result<()>,
) -> Result<TrainingResult> {
    if config.n_arenas == 0 || config.timesteps == 0 {
        return Err(Error::Config("arenas and timesteps must be positive".into()));
    }
    method.hyper.validate().map_err(Error::Config)?;
    let nets = Networks::for_method(method.method, graph.degree());
    let exec = Executor::new(config.workers, config.learners);
    let mut arenas: Vec<Vec<AgentState>> = (0..config.n_arenas)
        .map(|a| init_population(config, method, &nets, graph.n_agents(), a as u64))
        .collect::<Result<_>>()?;
    let mut hyper = method.hyper.clone();
    let span = config.episodes.saturating_sub(1) as f64 * hyper.entropy_anneal;
    hyper.entropy.horizon = (span.round() as u64).max(1);
    let mut cooperation = Vec::with_capacity(config.episodes as usize);
    for episode in 0..config.episodes {
        let mut outputs = Vec::with_capacity(config.n_arenas);
        for (a, agents) in arenas.iter_mut().enumerate() {
            let ctx = EpisodeContext {
                graph,
                payoff: method.payoff,
                hyper: &hyper,
                timesteps: config.timesteps,
                dilemma_net: &nets.dilemma,
                eval_net: nets.evaluation.as_ref(),
                seed: config.seed,
                arena: a as u64,
                episode,
                total_episodes: config.episodes,
                exec: &exec,
            };
            outputs.push(lr2_episode(&ctx, agents)?);
        }
        cooperation.push(outputs.iter().map(|o| o.mean_cooperation()).sum::<f64>() / outputs.len() as f64);
        observe(&EpisodeReport {
            episode,
            arenas: &outputs,
            agents: &arenas,
        })?;
    }
    Ok(TrainingResult { arenas, cooperation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::make_payoff_matrix;
    use crate::topology::{build_lattice, TopologyKind};

    fn small(method: Method) -> (ArenaConfig, MethodConfig, NeighborGraph) {
        let config = ArenaConfig {
            n_arenas: 1,
            episodes: 3,
            timesteps: 5,
            seed: 9,
            workers: 1,
            learners: 1,
        };
        let m = MethodConfig {
            method,
            hyper: Hyperparameters::default(),
            payoff: make_payoff_matrix(1.1, -0.1).unwrap(),
            adversarial_fraction: 0.0,
        };
        (config, m, build_lattice(3, TopologyKind::LatticeVonNeumann).unwrap())
    }

    #[test]
    fn cooperation_counts() {
        use Action::{Cooperate as C, Defect as D};
        assert_eq!(measure_cooperation(&[C, C, C]), 1.0);
        assert_eq!(measure_cooperation(&[C, D, C, D]), 0.5);
        assert_eq!(measure_cooperation(&[D]), 0.0);
    }

    #[test]
    fn conditional_stats_mark_empty_cells() {
        let tr = |a: Action, r: f64, p: f64| Trajectory {
            actions: vec![a],
            rewards: vec![r],
            reputation: vec![p],
            ..Default::default()
        };
        let all_d = [tr(Action::Defect, 1.0, 0.2), tr(Action::Defect, 3.0, 0.4)];
        let s = strategy_conditioned_stats(&all_d);
        assert_eq!(s[0].reward_c, None);
        assert_eq!(s[0].reputation_c, None);
        assert_eq!(s[0].reward_d, Some(2.0));
        assert!((s[0].reputation_d.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn population_init_is_seeded() {
        let (config, m, g) = small(Method::Lr2);
        let nets = Networks::for_method(m.method, g.degree());
        let a = init_population(&config, &m, &nets, 9, 0).unwrap();
        let b = init_population(&config, &m, &nets, 9, 0).unwrap();
        assert_eq!(a.len(), 9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.dilemma, y.dilemma);
            assert_eq!(x.evaluation, y.evaluation);
            assert_eq!(x.reputation, y.reputation);
        }
        assert!(a.iter().all(|s| (0.0..=1.0).contains(&s.reputation)));
        let dd = Networks::for_method(Method::DirectOnly, 4);
        assert!(dd.evaluation.is_none());
        assert_eq!(dd.dilemma.spec().input, 4);
    }

    #[test]
    fn adversarial_share_is_rounded() {
        let (config, mut m, g) = small(Method::Lr2);
        m.adversarial_fraction = 0.3;
        let nets = Networks::for_method(m.method, g.degree());
        let a = init_population(&config, &m, &nets, 9, 0).unwrap();
        assert_eq!(a.iter().filter(|s| s.variant == Variant::Adversarial).count(), 3);
        m.method = Method::Ippo;
        assert!(init_population(&config, &m, &nets, 9, 0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Lr2,
            Method::DirectOnly,
            Method::Ippo,
            Method::Norm(SocialNorm::ImageScore),
            Method::Norm(SocialNorm::SternJudging),
        ] {
            assert_eq!(Method::parse(&m.name()), Some(m));
        }
        assert_eq!(Method::parse("norm:xx"), None);
    }

    #[test]
    fn training_runs_every_method() {
        for method in [
            Method::Lr2,
            Method::DirectOnly,
            Method::Ippo,
            Method::Norm(SocialNorm::ImageScore),
        ] {
            let (config, m, g) = small(method);
            let mut seen = 0;
            let res = run_training(&config, &m, &g, &mut |r| {
                assert_eq!(r.arenas[0].trajectories[0].actions.len(), 5);
                seen += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, 3);
            assert_eq!(res.cooperation.len(), 3);
            assert!(res.cooperation.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
