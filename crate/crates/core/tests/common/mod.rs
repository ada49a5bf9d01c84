//! Shared oracles for integration tests and the acceptance gate.
#![allow(dead_code)]

use lr2_core::autodiff::sigmoid;
use lr2_core::game::{make_payoff_matrix, pairwise_payoff, Action, PayoffMatrix};
use lr2_core::learner::{chain_weights, disagreement_penalty, ChainParams, NeighbourTrace};

/// Three agents on a triangle, one step. Each dilemma policy is
/// `π(C) = σ(θ)` and each evaluator assigns `σ(η)` to both neighbours.
/// Agent 0 is the assessor whose evaluation gradient is checked.
pub struct ChainToy {
    pub theta: [f64; 3],
    pub eta: [f64; 3],
    /// Actions sampled on the original trajectory.
    pub actions: [Action; 3],
    pub prev_reputation: [f64; 3],
    pub payoff: PayoffMatrix,
    pub beta: f64,
    pub alpha: f64,
    pub mu: f64,
    pub lr: f64,
}

const ACTIONS: [Action; 2] = [Action::Cooperate, Action::Defect];

fn score(theta: f64, a: Action) -> f64 {
    match a {
        Action::Cooperate => 1.0 - sigmoid(theta),
        Action::Defect => -sigmoid(theta),
    }
}

fn prob(theta: f64, a: Action) -> f64 {
    match a {
        Action::Cooperate => sigmoid(theta),
        Action::Defect => 1.0 - sigmoid(theta),
    }
}

fn others(i: usize) -> [usize; 2] {
    [(i + 1) % 3, (i + 2) % 3]
}

impl ChainToy {
    pub fn example() -> Self {
        ChainToy {
            theta: [0.3, -0.4, 0.8],
            eta: [0.2, -0.7, 0.5],
            actions: [Action::Cooperate, Action::Defect, Action::Cooperate],
            prev_reputation: [0.4, 0.6, 0.3],
            payoff: make_payoff_matrix(1.3, -0.3).unwrap(),
            beta: 0.6,
            alpha: 0.5,
            mu: 0.2,
            lr: 0.7,
        }
    }

    fn env(&self, i: usize, a: &[Action; 3]) -> f64 {
        others(i).iter().map(|&j| pairwise_payoff(a[i], a[j], &self.payoff)).sum()
    }

    /// Neighbour `j`'s reward on the original step with agent 0 assessing at `p0`.
    fn reshaped(&self, j: usize, p0: f64) -> f64 {
        let assessments: Vec<f64> = others(j)
            .iter()
            .map(|&k| if k == 0 { p0 } else { sigmoid(self.eta[k]) })
            .collect();
        let rep = self.alpha * self.prev_reputation[j] + (1.0 - self.alpha) * assessments.iter().sum::<f64>() / 2.0;
        let r = self.env(j, &self.actions);
        self.beta * r + rep * (1.0 - self.beta) * r
    }

    /// One REINFORCE step of neighbour `j` on the original step.
    fn updated_theta(&self, j: usize, p0: f64) -> f64 {
        self.theta[j] + self.lr * score(self.theta[j], self.actions[j]) * self.reshaped(j, p0)
    }

    /// Agent 0's centred evaluation reward against `j` on a one-step rollout.
    fn eval_reward(&self, j: usize, a: &[Action; 3]) -> f64 {
        let r: Vec<f64> = others(0).iter().map(|&k| pairwise_payoff(a[0], a[k], &self.payoff)).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let slot = others(0).iter().position(|&k| k == j).unwrap();
        r[slot] - mean
    }

    fn disagreement(&self, p0: f64) -> (f64, f64) {
        // Each neighbour of 0 is also rated by the third agent.
        let own = [p0, p0];
        let peer_vals: Vec<[f64; 1]> = others(0)
            .iter()
            .map(|&j| {
                let k = others(j).into_iter().find(|&k| k != 0).unwrap();
                [sigmoid(self.eta[k])]
            })
            .collect();
        let peers: Vec<&[f64]> = peer_vals.iter().map(|v| v.as_slice()).collect();
        let (d, g) = disagreement_penalty(&own, &peers).unwrap();
        (d, g.iter().sum())
    }

    /// Exact objective: for each neighbour `j`, the expected evaluation
    /// reward when only `j` has taken its η-dependent step, minus `μ D`.
    pub fn objective(&self, eta0: f64) -> f64 {
        let p0 = sigmoid(eta0);
        let base = sigmoid(self.eta[0]);
        let mut total = 0.0;
        for j in others(0) {
            let thetas: Vec<f64> = (0..3)
                .map(|k| match k {
                    0 => self.theta[0],
                    k if k == j => self.updated_theta(k, p0),
                    k => self.updated_theta(k, base),
                })
                .collect();
            for a0 in ACTIONS {
                for a1 in ACTIONS {
                    for a2 in ACTIONS {
                        let a = [a0, a1, a2];
                        let pr: f64 = (0..3).map(|k| prob(thetas[k], a[k])).product();
                        total += pr * self.eval_reward(j, &a);
                    }
                }
            }
        }
        total - self.mu * self.disagreement(p0).0
    }

    /// Analytic gradient from [`chain_weights`], exact over the rollout.
    pub fn analytic_gradient(&self) -> f64 {
        let p0 = sigmoid(self.eta[0]);
        let dp = p0 * (1.0 - p0);
        let (d, d_grad) = self.disagreement(p0);
        let params = ChainParams {
            gamma: 0.99,
            alpha: self.alpha,
            mu: self.mu,
            shaping_lr: self.lr,
        };
        let thetas: Vec<f64> = (0..3)
            .map(|k| if k == 0 { self.theta[0] } else { self.updated_theta(k, p0) })
            .collect();
        let mut grad = 0.0;
        for j in others(0) {
            let env = [self.env(j, &self.actions)];
            for a0 in ACTIONS {
                for a1 in ACTIONS {
                    for a2 in ACTIONS {
                        let a = [a0, a1, a2];
                        let pr: f64 = (0..3).map(|k| prob(thetas[k], a[k])).product();
                        let gram = vec![vec![score(self.theta[j], self.actions[j]) * score(thetas[j], a[j])]];
                        let trace = NeighbourTrace {
                            gram: &gram,
                            env_rewards: &env,
                            beta: self.beta,
                            degree: 2,
                        };
                        let returns = [self.eval_reward(j, &a) - self.mu * d];
                        let w = chain_weights(&trace, &returns, params).unwrap();
                        grad += pr * w[0] * dp;
                    }
                }
            }
        }
        grad - self.mu * d_grad * dp
    }

    pub fn finite_difference(&self, eps: f64) -> f64 {
        (self.objective(self.eta[0] + eps) - self.objective(self.eta[0] - eps)) / (2.0 * eps)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
