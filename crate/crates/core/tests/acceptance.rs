//! Acceptance gate: one pass/fail line per criterion.
//!
//! `LR2_ACCEPTANCE_ONLY=1,2,8` restricts the run to the listed criteria.

mod common;

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::{relative_error, ChainToy};
use lr2_core::arena::{run_training, ArenaConfig, Method, MethodConfig};
use lr2_core::experiment::{self, ExperimentConfig};
use lr2_core::game::{make_payoff_matrix, Action};
use lr2_core::learner::{disagreement_penalty, evaluation_reward, reshape_reward, Hyperparameters};
use lr2_core::reputation::{assess_norm, update_reputation, SocialNorm, Standing};
use lr2_core::selfcheck::gradient_check;
use lr2_core::topology::{build_lattice, TopologyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const EPISODES: u64 = 2000;
const TIMESTEPS: usize = 20;
const SIDE: usize = 10;
/// Learner settings for the short desk-scale runs, shared by every method.
const DESK_PROFILE: &str = "learner.lr = 0.003\nlearner.alpha = 0.2\nlearner.shaping_lr = 0.05\n";

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

/// Desk-scale runs, cached by configuration so shared cells train once.
struct Desk {
    root: PathBuf,
    cache: HashMap<String, f64>,
}

impl Desk {
    fn new() -> Self {
        Desk {
            root: PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"),
            cache: HashMap::new(),
        }
    }

    /// Replicate-averaged final cooperation of one cell.
    fn cooperation(&mut self, method: &str, t: f64, s: f64, extra: &[&str]) -> Result<f64, String> {
        let name = format!("run{}", self.cache.len());
        let text = format!(
            "run.name = {name:?}\nrun.seeds = {SEEDS:?}\nrun.episodes = {EPISODES}\nrun.timesteps = {TIMESTEPS}\n\
             run.output_dir = {:?}\ntopology.side = {SIDE}\nmethod.name = {method:?}\ngame.t = {t}\ngame.s = {s}\n{DESK_PROFILE}",
            self.root.to_string_lossy()
        );
        let overrides: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        let cfg = ExperimentConfig::parse(&text, &overrides).map_err(|e| e.to_string())?;
        let key: String = cfg.to_dotted().lines().filter(|l| !l.starts_with("run.name")).collect();
        if let Some(&c) = self.cache.get(&key) {
            return Ok(c);
        }
        let label = format!("{method} T={t} S={s} {}", extra.join(" "));
        let start = Instant::now();
        let out = experiment::run(&cfg).map_err(|e| e.to_string())?;
        if let Some(f) = out.failures.first() {
            return Err(format!("{}: {}", f.run_id, f.error));
        }
        let c = out.summary[0].mean_cooperation;
        eprintln!(
            "  [{label}] cooperation {c:.3} ± {:.3} ({:.0}s)",
            out.summary[0].std_cooperation,
            start.elapsed().as_secs_f64()
        );
        self.cache.insert(key, c);
        Ok(c)
    }
}

fn gradients() -> Verdict {
    match gradient_check(100, 2024) {
        Ok(worst) => verdict(worst <= 1e-4, format!("worst relative error {worst:.2e} over 100 cases")),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn degeneration() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let exact = (0..100_000).all(|_| {
        let r: f64 = rng.gen_range(-8.0..8.0);
        reshape_reward(r, rng.gen(), 1.0).to_bits() == r.to_bits()
    });
    let graph = build_lattice(6, TopologyKind::LatticeVonNeumann).unwrap();
    let hyper = Hyperparameters {
        beta: 1.0,
        mu: 0.0,
        ..Hyperparameters::default()
    };
    let config = ArenaConfig {
        n_arenas: 2,
        episodes: 10,
        timesteps: 8,
        seed: 5,
        workers: 1,
        learners: 1,
    };
    let train = |method| -> Vec<u64> {
        let m = MethodConfig {
            method,
            hyper: hyper.clone(),
            payoff: make_payoff_matrix(1.3, -0.3).unwrap(),
            adversarial_fraction: 0.0,
        };
        let r = run_training(&config, &m, &graph, &mut |_| Ok(())).unwrap();
        r.arenas
            .iter()
            .flatten()
            .flat_map(|a| a.dilemma.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let same = train(Method::Lr2) == train(Method::Ippo);
    verdict(
        exact && same,
        format!("β=1 reshaping bit-exact: {exact}; LR2(β=1, μ=0) θ ≡ IPPO θ after 10 episodes: {same}"),
    )
}

fn norms() -> Verdict {
    // Judgement of a donor from the prose definitions, independent of the tables.
    let prose = |norm: SocialNorm, a: Action, good_recipient: bool| -> bool {
        let c = a == Action::Cooperate;
        match norm {
            SocialNorm::SternJudging => c == good_recipient,
            SocialNorm::SimpleStanding => c || !good_recipient,
            SocialNorm::Shunning => c && good_recipient,
            SocialNorm::ImageScore => c,
        }
    };
    let mut mismatches = Vec::new();
    for norm in SocialNorm::ALL {
        for a in [Action::Cooperate, Action::Defect] {
            for good in [true, false] {
                let standing = if good { Standing::Good } else { Standing::Bad };
                if (assess_norm(norm, a, standing) == 1) != prose(norm, a, good) {
                    mismatches.push(format!("{}:{a:?}/{standing:?}", norm.tag()));
                }
            }
        }
    }
    verdict(mismatches.is_empty(), format!("16 cases, mismatches {mismatches:?}"))
}

fn reputation_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p: f64 = rng.gen();
    let mut worst_hull = 0.0f64;
    for _ in 0..1_000_000 {
        let k = rng.gen_range(1..=8);
        let a: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
        let alpha: f64 = rng.gen();
        let mean = a.iter().sum::<f64>() / k as f64;
        let next = update_reputation(p, &a, alpha).unwrap();
        if !(0.0..=1.0).contains(&next) {
            return verdict(false, format!("left [0, 1]: {next}"));
        }
        let (lo, hi) = (p.min(mean), p.max(mean));
        worst_hull = worst_hull.max(lo - next).max(next - hi);
        p = next;
    }
    let fixed = (0..1000).all(|_| {
        let q: f64 = rng.gen();
        let k = rng.gen_range(1..=8);
        (update_reputation(q, &vec![q; k], rng.gen()).unwrap() - q).abs() < 1e-15
    });
    verdict(
        worst_hull <= 1e-15 && fixed,
        format!("10^6 updates in [0, 1]; worst convex-hull excursion {worst_hull:.1e}; fixed point holds: {fixed}"),
    )
}

fn evaluation_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sum = 0.0f64;
    let mut negative = 0;
    let mut consensus = 0.0f64;
    for _ in 0..100_000 {
        let k = rng.gen_range(1..=8);
        let r: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        worst_sum = worst_sum.max(evaluation_reward(&r).unwrap().iter().sum::<f64>().abs());
        let own: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
        let peers: Vec<Vec<f64>> = (0..k).map(|_| (0..rng.gen_range(0..8)).map(|_| rng.gen()).collect()).collect();
        let refs: Vec<&[f64]> = peers.iter().map(|v| v.as_slice()).collect();
        if disagreement_penalty(&own, &refs).unwrap().0 < 0.0 {
            negative += 1;
        }
        let agree: Vec<Vec<f64>> = own.iter().map(|&p| vec![p; rng.gen_range(0..8)]).collect();
        let refs: Vec<&[f64]> = agree.iter().map(|v| v.as_slice()).collect();
        consensus = consensus.max(disagreement_penalty(&own, &refs).unwrap().0);
    }
    verdict(
        worst_sum <= 1e-12 && negative == 0 && consensus == 0.0,
        format!("max |Σ r_eval| {worst_sum:.1e}; negative D {negative}; max D at consensus {consensus}"),
    )
}

fn chain_rule() -> Verdict {
    let toy = ChainToy::example();
    let (a, fd) = (toy.analytic_gradient(), toy.finite_difference(1e-5));
    let mut worst = relative_error(a, fd);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let toy = ChainToy {
            theta: [u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0)],
            eta: [u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0)],
            actions: [0.5, 0.5, 0.5].map(|c| if u(0.0, 1.0) < c { Action::Cooperate } else { Action::Defect }),
            prev_reputation: [u(0.0, 1.0), u(0.0, 1.0), u(0.0, 1.0)],
            payoff: make_payoff_matrix(u(1.0, 2.0), u(-1.0, 0.0)).unwrap(),
            beta: u(0.0, 1.0),
            alpha: u(0.0, 1.0),
            mu: u(0.0, 1.0),
            lr: u(0.1, 2.0),
        };
        let (a, fd) = (toy.analytic_gradient(), toy.finite_difference(1e-5));
        if (a - fd).abs() > 1e-9 {
            worst = worst.max(relative_error(a, fd));
        }
    }
    verdict(worst <= 1e-4, format!("worst relative error {worst:.2e} over 101 toys"))
}

fn determinism() -> Verdict {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let max_workers = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let text = "run.name = \"det\"\nrun.episodes = 15\nrun.timesteps = 6\nrun.arenas = 2\ntopology.side = 5\n";
    let run = |workers: usize| -> Result<String, String> {
        let dir = root.join(format!("w{workers}"));
        let overrides = vec![
            format!("run.output_dir={:?}", dir.to_string_lossy()),
            format!("run.workers={workers}"),
            format!("run.learners={workers}"),
        ];
        let cfg = ExperimentConfig::parse(text, &overrides).map_err(|e| e.to_string())?;
        let out = experiment::run(&cfg).map_err(|e| e.to_string())?;
        std::fs::read_to_string(out.output_dir.join("cells/det_lr2_T1.1_S-0.1_r0/metrics.csv")).map_err(|e| e.to_string())
    };
    match (run(1), run(max_workers)) {
        (Ok(a), Ok(b)) => verdict(a == b, format!("metrics.csv identical for 1 and {max_workers} workers: {}", a == b)),
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

fn pd_weak(desk: &mut Desk) -> Result<Verdict, String> {
    let lr2 = desk.cooperation("lr2", 1.1, -0.1, &[])?;
    let dd = desk.cooperation("dd", 1.1, -0.1, &[])?;
    Ok(verdict(lr2 >= 0.8 && dd <= 0.2, format!("LR2 {lr2:.3} (≥ 0.8), D-D {dd:.3} (≤ 0.2)")))
}

fn pd_strong(desk: &mut Desk) -> Result<Verdict, String> {
    let lr2 = desk.cooperation("lr2", 1.3, -0.3, &[])?;
    let ippo = desk.cooperation("ippo", 1.3, -0.3, &[])?;
    Ok(verdict(lr2 - ippo >= 0.5, format!("LR2 {lr2:.3} − IPPO {ippo:.3} = {:.3} (≥ 0.5)", lr2 - ippo)))
}

fn sg_sh(desk: &mut Desk) -> Result<Verdict, String> {
    let sg = desk.cooperation("lr2", 1.1, 0.1, &[])?;
    let sh = desk.cooperation("lr2", 0.9, -0.1, &[])?;
    let dd_sg = desk.cooperation("dd", 1.1, 0.1, &[])?;
    Ok(verdict(
        sg >= 0.8 && sh >= 0.8 && dd_sg <= 0.6,
        format!("LR2 SG {sg:.3}, SH {sh:.3} (≥ 0.8); D-D SG {dd_sg:.3} (≤ 0.6)"),
    ))
}

fn norm_ordering(desk: &mut Desk) -> Result<Verdict, String> {
    let mut c = HashMap::new();
    for tag in ["is", "ss", "sh", "sj"] {
        c.insert(tag, desk.cooperation(&format!("norm:{tag}"), 1.3, -0.33, &[])?);
    }
    let (is, ss, sh, sj) = (c["is"], c["ss"], c["sh"], c["sj"]);
    let ok = is - ss >= 0.1 && ss - sh.max(sj) >= 0.1 && sj <= 0.1;
    Ok(verdict(ok, format!("IS {is:.3} > SS {ss:.3} > max(SH {sh:.3}, SJ {sj:.3}) by ≥ 0.1; SJ ≤ 0.1")))
}

fn beta_trend(desk: &mut Desk) -> Result<Verdict, String> {
    let mut c = Vec::new();
    for beta in ["0.5", "0.6", "0.7"] {
        c.push(desk.cooperation("lr2", 1.33, -0.33, &[&format!("learner.beta={beta}")])?);
    }
    let ok = c[0] > c[1] && c[1] > c[2] && c[0] - c[2] >= 0.4;
    Ok(verdict(ok, format!("β 0.5/0.6/0.7 → {:.3}/{:.3}/{:.3}; strictly decreasing, drop ≥ 0.4", c[0], c[1], c[2])))
}

fn adversarial(desk: &mut Desk) -> Result<Verdict, String> {
    let mut c = Vec::new();
    for frac in ["0.0", "0.1", "0.3"] {
        c.push(desk.cooperation("lr2", 1.3, -0.33, &[&format!("method.adversarial_fraction={frac}")])?);
    }
    let ok = c[0] >= c[1] && c[1] >= c[2] && c[2] <= 0.1;
    Ok(verdict(ok, format!("LR2 share 100/90/70% → {:.3}/{:.3}/{:.3}; non-increasing, 70% ≤ 0.1", c[0], c[1], c[2])))
}

fn temptation_trend(desk: &mut Desk) -> Result<Verdict, String> {
    let mut c = Vec::new();
    for t in [1.30, 1.33, 1.35, 1.37] {
        c.push(desk.cooperation("lr2", t, -0.33, &[])?);
    }
    let ok = c.windows(2).all(|w| w[1] <= w[0] + 0.1) && c[3] < c[0];
    Ok(verdict(
        ok,
        format!("T 1.30/1.33/1.35/1.37 → {:.3}/{:.3}/{:.3}/{:.3}; decreasing within ±0.1", c[0], c[1], c[2], c[3]),
    ))
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("LR2_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let selected = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut desk = Desk::new();
    type Quick = fn() -> Verdict;
    type Long = fn(&mut Desk) -> Result<Verdict, String>;
    let quick: [(u32, &str, Quick); 7] = [
        (1, "autodiff gradient check", gradients),
        (2, "selfish degeneration", degeneration),
        (3, "norm truth tables", norms),
        (4, "reputation update invariants", reputation_invariants),
        (5, "evaluation reward and disagreement invariants", evaluation_invariants),
        (6, "chain-rule toy vs finite differences", chain_rule),
        (7, "determinism across worker counts", determinism),
    ];
    let long: [(u32, &str, Long); 7] = [
        (8, "PD (1.1, -0.1): LR2 vs D-D", pd_weak),
        (9, "PD (1.3, -0.3): LR2 vs IPPO", pd_strong),
        (10, "SG (1.1, 0.1) and SH (0.9, -0.1)", sg_sh),
        (11, "predefined norm ordering at T=1.30", norm_ordering),
        (12, "beta trend at T=1.33", beta_trend),
        (13, "adversarial collapse at T=1.30", adversarial),
        (14, "cooperation falls with temptation at S=-0.33", temptation_trend),
    ];
    let mut failed = 0;
    let mut report = |id: u32, name: &str, v: Verdict, secs: f64| {
        if !v.passed {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {} [{secs:.0}s]",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    };
    for (id, name, f) in quick {
        if selected(id) {
            let start = Instant::now();
            let v = f();
            report(id, name, v, start.elapsed().as_secs_f64());
        }
    }
    for (id, name, f) in long {
        if selected(id) {
            let start = Instant::now();
            let v = f(&mut desk).unwrap_or_else(|e| verdict(false, format!("error: {e}")));
            report(id, name, v, start.elapsed().as_secs_f64());
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
