//! Fast invariant checks behind the `check` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::tape::log_sum_exp;
use crate::autodiff::{sigmoid, Head, Mlp, MlpSpec, ParameterVector, Scratch, Tape};
use crate::error::Result;
use crate::game::{classify_game, make_payoff_matrix, Action, GameClass};
use crate::learner::{disagreement_penalty, evaluation_reward, reshape_reward};
use crate::reputation::{assess_norm, update_reputation, SocialNorm, Standing};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random network, input batch and loss weights for one gradient check.
struct GradCase {
    net: Mlp,
    params: ParameterVector,
    input: Vec<f64>,
    rows: usize,
    logit_w: Vec<f64>,
    value_w: Vec<f64>,
}

impl GradCase {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let head = if rng.gen_bool(0.5) { Head::Softmax } else { Head::Sigmoid };
        let outputs = match head {
            Head::Softmax => 2,
            Head::Sigmoid => rng.gen_range(1..=8),
        };
        let spec = MlpSpec {
            input: rng.gen_range(1..=16),
            outputs,
            head,
        };
        let net = Mlp::new(spec);
        let mut params = net.init(rng);
        for p in params.as_mut_slice() {
            *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let rows = rng.gen_range(1..=4);
        let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        GradCase {
            input: normal(rows * spec.input),
            logit_w: normal(rows * outputs),
            value_w: normal(rows),
            net,
            params,
            rows,
        }
    }

    /// Head-transformed weighted loss plus a squared value term, computed
    /// without the tape.
    fn loss(&self, params: &[f64]) -> f64 {
        let spec = self.net.spec();
        let mut scratch = Scratch::default();
        let mut logits = vec![0.0; spec.outputs];
        let mut total = 0.0;
        for r in 0..self.rows {
            let x = &self.input[r * spec.input..(r + 1) * spec.input];
            let v = self.net.forward_raw(params, x, &mut scratch, &mut logits);
            let w = &self.logit_w[r * spec.outputs..(r + 1) * spec.outputs];
            total += match spec.head {
                Head::Softmax => {
                    let lse = log_sum_exp(&logits);
                    logits.iter().zip(w).map(|(z, w)| w * (z - lse)).sum::<f64>()
                }
                Head::Sigmoid => logits.iter().zip(w).map(|(z, w)| w * sigmoid(*z)).sum::<f64>(),
            };
            total += self.value_w[r] * v * v;
        }
        total
    }

    fn tape_gradient(&self) -> Result<ParameterVector> {
        let spec = self.net.spec();
        let mut tape = Tape::new();
        let fwd = self.net.forward_tape(&mut tape, &self.params, &self.input, self.rows)?;
        let head = match spec.head {
            Head::Softmax => tape.log_softmax(fwd.logits),
            Head::Sigmoid => tape.sigmoid(fwd.logits),
        };
        let lw = tape.input(self.rows, spec.outputs, &self.logit_w);
        let vw = tape.input(self.rows, 1, &self.value_w);
        let a = tape.mul(head, lw);
        let sq = tape.square(fwd.value);
        let b = tape.mul(sq, vw);
        let sa = tape.sum(a);
        let sb = tape.sum(b);
        let loss = tape.add(sa, sb);
        tape.backward(loss, 1.0)?;
        Ok(self.net.gradient(&tape, &fwd))
    }
}

/// Tape gradients against central differences on random networks.
/// Returns the worst `‖g − ĝ‖∞ / ‖g‖∞` over `cases`.
pub fn gradient_check(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let case = GradCase::sample(&mut rng);
        let g = case.tape_gradient()?;
        let mut p = case.params.as_slice().to_vec();
        let (mut err, mut scale): (f64, f64) = (0.0, 0.0);
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + eps;
            let up = case.loss(&p);
            p[i] = orig - eps;
            let down = case.loss(&p);
            p[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            err = err.max((fd - g.as_slice()[i]).abs());
            scale = scale.max(g.as_slice()[i].abs());
        }
        worst = worst.max(err / scale.max(1e-12));
    }
    Ok(worst)
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("autodiff gradients vs finite differences", || {
            let worst = gradient_check(20, 11)?;
            Ok((worst <= 1e-4, format!("worst relative error {worst:.2e} over 20 cases")))
        }),
        check("payoff classification", || {
            let cases = [
                ((1.3, -0.3), GameClass::PrisonersDilemma),
                ((1.1, 0.1), GameClass::Snowdrift),
                ((0.9, -0.1), GameClass::StagHunt),
            ];
            let mut ok = true;
            for ((t, s), want) in cases {
                ok &= classify_game(&make_payoff_matrix(t, s)?) == want;
            }
            ok &= make_payoff_matrix(2.1, 0.0).is_err();
            Ok((ok, "PD, SG, SH and range errors".into()))
        }),
        check("selfish reshaping is the identity", || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let ok = (0..10_000).all(|_| {
                let r: f64 = rng.gen_range(-4.0..8.0);
                reshape_reward(r, rng.gen(), 1.0).to_bits() == r.to_bits()
            });
            Ok((ok, "β = 1 over 10k draws".into()))
        }),
        check("social norm truth tables", || {
            let expect = [
                (SocialNorm::SternJudging, [1, 0, 0, 1]),
                (SocialNorm::SimpleStanding, [1, 0, 1, 1]),
                (SocialNorm::Shunning, [1, 0, 0, 0]),
                (SocialNorm::ImageScore, [1, 0, 1, 0]),
            ];
            let inputs = [
                (Action::Cooperate, Standing::Good),
                (Action::Defect, Standing::Good),
                (Action::Cooperate, Standing::Bad),
                (Action::Defect, Standing::Bad),
            ];
            let ok = expect.iter().all(|(norm, table)| {
                inputs
                    .iter()
                    .zip(table)
                    .all(|((a, st), want)| assess_norm(*norm, *a, *st) == *want)
            });
            Ok((ok, "SJ, SS, SH, IS".into()))
        }),
        check("reputation stays in [0, 1]", || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut p: f64 = rng.gen();
            for _ in 0..100_000 {
                let k = rng.gen_range(1..=8);
                let a: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
                p = update_reputation(p, &a, rng.gen())?;
                if !(0.0..=1.0).contains(&p) {
                    return Ok((false, format!("left the unit interval: {p}")));
                }
            }
            Ok((true, "100k random updates".into()))
        }),
        check("evaluation rewards are centred, disagreement is non-negative", || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..1000 {
                let k = rng.gen_range(1..=8);
                let r: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let sum: f64 = evaluation_reward(&r)?.iter().sum();
                if sum.abs() > 1e-12 {
                    return Ok((false, format!("rewards sum to {sum}")));
                }
                let own: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
                let peers: Vec<Vec<f64>> = (0..k).map(|_| (0..3).map(|_| rng.gen()).collect()).collect();
                let refs: Vec<&[f64]> = peers.iter().map(|v| v.as_slice()).collect();
                if disagreement_penalty(&own, &refs)?.0 < 0.0 {
                    return Ok((false, "negative disagreement".into()));
                }
                let same: Vec<Vec<f64>> = own.iter().map(|&p| vec![p; 3]).collect();
                let refs: Vec<&[f64]> = same.iter().map(|v| v.as_slice()).collect();
                if disagreement_penalty(&own, &refs)?.0 != 0.0 {
                    return Ok((false, "consensus has non-zero disagreement".into()));
                }
            }
            Ok((true, "1000 random rounds".into()))
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn gradient_check_detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let case = GradCase::sample(&mut rng);
        let g = case.tape_gradient().unwrap();
        let mut p = case.params.as_slice().to_vec();
        let i = g.as_slice().iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        p[i] += 1e-5;
        let up = case.loss(&p);
        p[i] -= 2e-5;
        let fd = (up - case.loss(&p)) / 2e-5;
        assert!((fd - g.as_slice()[i]).abs() < 1e-6 * g.as_slice()[i].abs().max(1.0));
        assert!((1.5 * fd - g.as_slice()[i]).abs() > 1e-3 * fd.abs());
    }
}
