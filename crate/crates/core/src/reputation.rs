//! Reputation state, learned and rule-based assessments, and the running
//! average that folds neighbours' assessments into a scalar standing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Mlp, ParameterVector, Scratch};
use crate::error::{Error, Result};
use crate::game::Action;
use crate::topology::Adjacency;

/// Binary standing used by the rule-based norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Standing {
    Good,
    Bad,
}

/// `Good` iff `p ≥ 0.5`.
pub fn binarize(p: f64) -> Standing {
    if p >= 0.5 {
        Standing::Good
    } else {
        Standing::Bad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SocialNorm {
    SternJudging,
    SimpleStanding,
    Shunning,
    ImageScore,
}

impl SocialNorm {
    pub const ALL: [SocialNorm; 4] = [
        SocialNorm::SternJudging,
        SocialNorm::SimpleStanding,
        SocialNorm::Shunning,
        SocialNorm::ImageScore,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SocialNorm::SternJudging => "sj",
            SocialNorm::SimpleStanding => "ss",
            SocialNorm::Shunning => "sh",
            SocialNorm::ImageScore => "is",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        SocialNorm::ALL.into_iter().find(|n| n.tag() == tag)
    }

    /// Truth table `(d_GC, d_GD, d_BC, d_BD)`: the judgement of a donor's
    /// action toward a recipient of the given standing.
    pub fn table(self) -> [u8; 4] {
        match self {
            SocialNorm::SternJudging => [1, 0, 0, 1],
            SocialNorm::SimpleStanding => [1, 0, 1, 1],
            SocialNorm::Shunning => [1, 0, 0, 0],
            SocialNorm::ImageScore => [1, 0, 1, 0],
        }
    }
}

pub fn assess_norm(norm: SocialNorm, donor_action: Action, recipient: Standing) -> u8 {
    let idx = match (recipient, donor_action) {
        (Standing::Good, Action::Cooperate) => 0,
        (Standing::Good, Action::Defect) => 1,
        (Standing::Bad, Action::Cooperate) => 2,
        (Standing::Bad, Action::Defect) => 3,
    };
    norm.table()[idx]
}

/// `P_t = α P_{t−1} + (1 − α)/|Ω| Σ_j p_j`.
pub fn update_reputation(prev: f64, assessments: &[f64], alpha: f64) -> Result<f64> {
    if assessments.is_empty() {
        return Err(Error::Empty("assessment list"));
    }
    let sum: f64 = assessments.iter().sum();
    let p = alpha * prev + (1.0 - alpha) * sum / assessments.len() as f64;
    Ok(p.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationState {
    pub values: Vec<f64>,
    pub alpha: f64,
}

impl ReputationState {
    pub fn new(values: Vec<f64>, alpha: f64) -> Self {
        ReputationState { values, alpha }
    }

    pub fn uniform<R: Rng>(n: usize, alpha: f64, rng: &mut R) -> Self {
        ReputationState {
            values: (0..n).map(|_| rng.gen::<f64>()).collect(),
            alpha,
        }
    }

    /// Applies one round of assessments to every agent.
    pub fn apply(&mut self, round: &AssessmentRound, adj: &Adjacency, reverse: &[usize], hard: bool) {
        let deg = adj.degree();
        let mut buf = vec![0.0; deg];
        for (j, p) in self.values.iter_mut().enumerate() {
            for (s, &k) in adj.neighbours(j).iter().enumerate() {
                let slot = reverse[j * deg + s];
                buf[s] = if hard {
                    round.bit(k, slot) as f64
                } else {
                    round.prob(k, slot)
                };
            }
            *p = update_reputation(*p, &buf, self.alpha).expect("degree ≥ 1");
        }
    }
}

/// `reverse[j * deg + s]` is the slot that `j` occupies in the neighbour list
/// of its `s`-th neighbour.
pub fn reverse_slots(adj: &Adjacency) -> Vec<usize> {
    let deg = adj.degree();
    let mut out = vec![0; adj.n_agents() * deg];
    for j in 0..adj.n_agents() {
        for (s, &k) in adj.neighbours(j).iter().enumerate() {
            out[j * deg + s] = adj.slot_of(k, j).expect("symmetric adjacency");
        }
    }
    out
}

/// Assessments given in one round, indexed by (assessor, neighbour slot).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssessmentRound {
    degree: usize,
    probs: Vec<f64>,
    bits: Vec<u8>,
}

impl AssessmentRound {
    pub fn new(n_agents: usize, degree: usize) -> Self {
        AssessmentRound {
            degree,
            probs: vec![0.0; n_agents * degree],
            bits: vec![0; n_agents * degree],
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn set(&mut self, assessor: usize, slot: usize, prob: f64, bit: u8) {
        self.probs[assessor * self.degree + slot] = prob;
        self.bits[assessor * self.degree + slot] = bit;
    }

    pub fn prob(&self, assessor: usize, slot: usize) -> f64 {
        self.probs[assessor * self.degree + slot]
    }

    pub fn bit(&self, assessor: usize, slot: usize) -> u8 {
        self.bits[assessor * self.degree + slot]
    }

    pub fn given_by(&self, assessor: usize) -> &[f64] {
        &self.probs[assessor * self.degree..(assessor + 1) * self.degree]
    }

    pub fn set_row(&mut self, assessor: usize, probs: &[f64], bits: &[u8]) {
        let d = self.degree;
        self.probs[assessor * d..(assessor + 1) * d].copy_from_slice(probs);
        self.bits[assessor * d..(assessor + 1) * d].copy_from_slice(bits);
    }

    /// Probability that `assessor` gave `target`; errors if not adjacent.
    pub fn lookup(&self, adj: &Adjacency, assessor: usize, target: usize) -> Result<f64> {
        adj.slot_of(assessor, target)
            .map(|slot| self.prob(assessor, slot))
            .ok_or(Error::MissingAssessment { assessor, target })
    }
}

/// Assessment trace of a whole episode, one round per timestep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssessmentMatrix {
    pub rounds: Vec<AssessmentRound>,
}

impl AssessmentMatrix {
    pub fn get(&self, t: usize, adj: &Adjacency, assessor: usize, target: usize) -> Result<f64> {
        self.rounds
            .get(t)
            .ok_or(Error::MissingAssessment { assessor, target })?
            .lookup(adj, assessor, target)
    }
}

/// Per-neighbour assessment probabilities from the evaluation network, plus
/// one Bernoulli bit per neighbour drawn from `rng`.
pub fn assess_learned<R: Rng>(
    net: &Mlp,
    params: &ParameterVector,
    obs: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut scratch = Scratch::default();
    let out = net.forward_with(params, obs, &mut scratch)?;
    let probs: Vec<f64> = out.logits.iter().map(|&z| sigmoid(z)).collect();
    let bits = probs.iter().map(|&p| u8::from(rng.gen::<f64>() < p)).collect();
    Ok((probs, bits))
}
