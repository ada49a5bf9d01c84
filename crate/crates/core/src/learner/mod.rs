//! Reputation-reshaped policy learning: the dilemma-policy update, the
//! evaluation-policy update that differentiates through neighbours' updates,
//! and the per-episode orchestration tying them together.

pub mod dilemma;
pub mod episode;
pub mod evaluation;
pub mod returns;

pub use dilemma::{dilemma_update, log_prob_factors, reinforce_update, DilemmaStats};
pub use episode::{dilemma_observation, lr2_episode, EpisodeContext, EpisodeOutput, Trajectory};
pub use evaluation::{
    chain_weights, disagreement_penalty, evaluation_return, evaluation_reward, evaluation_update, ChainParams,
    ChainTarget, EvalStats, EvalUpdateInput, NeighbourTrace,
};
pub use returns::{compute_returns_and_advantages, discounted_returns, reshape_reward, Returns};

use serde::{Deserialize, Serialize};

/// Linear schedule from `start` to `end` over `horizon` episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropySchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl EntropySchedule {
    pub fn fixed(weight: f64) -> Self {
        EntropySchedule {
            start: weight,
            end: weight,
            horizon: 1,
        }
    }

    pub fn weight_at(&self, episode: u64) -> f64 {
        if self.horizon == 0 || episode >= self.horizon {
            return self.end;
        }
        let frac = episode as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Whether reputations fold in assessment probabilities or sampled bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssessmentMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DilemmaRule {
    Ppo,
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalOptimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Weight of the raw environmental reward in the reshaped reward.
    pub beta: f64,
    /// Disagreement sensitivity in the evaluation return.
    pub mu: f64,
    pub gamma: f64,
    pub entropy: EntropySchedule,
    /// Fraction of the run over which the entropy weight anneals.
    pub entropy_anneal: f64,
    /// Base learning rate, annealed linearly to zero.
    pub lr: f64,
    pub gae_lambda: f64,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub value_clip: f64,
    pub vf_coef: f64,
    /// Reputation smoothing.
    pub alpha: f64,
    pub assessment_mode: AssessmentMode,
    pub dilemma_rule: DilemmaRule,
    pub eval_optimizer: EvalOptimizer,
    /// Subtract a learned state baseline from the evaluation return.
    pub eval_baseline: bool,
    /// Step size of the one-step neighbour update differentiated by the
    /// evaluation update; `None` uses the current annealed `lr`.
    pub shaping_lr: Option<f64>,
    /// Base learning rate of the evaluation policy; `None` uses `lr`.
    pub eval_lr: Option<f64>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            beta: 0.6,
            mu: 0.2,
            gamma: 0.99,
            entropy: EntropySchedule {
                start: 0.1,
                end: 0.0,
                horizon: 1,
            },
            entropy_anneal: 1.0,
            lr: 3e-4,
            gae_lambda: 0.95,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            minibatch_size: 5,
            value_clip: 0.2,
            vf_coef: 0.5,
            alpha: 0.5,
            assessment_mode: AssessmentMode::Soft,
            dilemma_rule: DilemmaRule::Ppo,
            eval_optimizer: EvalOptimizer::Adam,
            eval_baseline: true,
            shaping_lr: None,
            eval_lr: None,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} outside [0, 1]"))
            }
        };
        unit("beta", self.beta)?;
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        unit("alpha", self.alpha)?;
        if !(self.mu >= 0.0) {
            return Err(format!("mu = {} must be non-negative", self.mu));
        }
        if let Some(e) = self.eval_lr.filter(|e| !(*e >= 0.0)) {
            return Err(format!("eval_lr = {e} must be non-negative"));
        }
        if !(self.lr >= 0.0) {
            return Err(format!("lr = {} must be non-negative", self.lr));
        }
        if !(self.entropy_anneal > 0.0 && self.entropy_anneal <= 1.0) {
            return Err(format!("entropy_anneal = {} outside (0, 1]", self.entropy_anneal));
        }
        if self.entropy.end > self.entropy.start {
            return Err("entropy schedule must be non-increasing".into());
        }
        if self.ppo_epochs == 0 || self.minibatch_size == 0 {
            return Err("ppo_epochs and minibatch_size must be positive".into());
        }
        if !(self.ppo_clip > 0.0) || !(self.value_clip > 0.0) {
            return Err("clip radii must be positive".into());
        }
        Ok(())
    }
}
