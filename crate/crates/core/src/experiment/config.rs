//! Experiment configuration: TOML with dotted keys, e.g.
//!
//! ```toml
//! run.name = "pd-desk"
//! run.episodes = 2000
//! game.t = [1.1, 1.3]
//! game.s = -0.1
//! topology.kind = "von_neumann"
//! method.name = "lr2"
//! learner.beta = 0.6
//! ```
//!
//! Precedence, lowest first: defaults, config file, `LR2_OUTPUT_DIR`,
//! `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, Method, MethodConfig};
use crate::error::{Error, Result};
use crate::game::make_payoff_matrix;
use crate::learner::{AssessmentMode, DilemmaRule, EntropySchedule, EvalOptimizer, Hyperparameters};
use crate::topology::{build_lattice, build_well_mixed_with, NeighborGraph, TopologyKind};

pub const OUTPUT_DIR_ENV: &str = "LR2_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    /// Replicate `r` uses `seed + r` unless `seeds` lists them explicitly.
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub replicates: usize,
    pub episodes: u64,
    pub timesteps: usize,
    pub arenas: usize,
    pub workers: usize,
    pub learners: usize,
    pub output_dir: String,
    /// Write the per-step long-format stream every this many episodes; 0 disables.
    pub step_log_every: u64,
    /// Episode counts after which a lattice snapshot of arena 0 is written.
    pub snapshot_episodes: Vec<u64>,
    /// Checkpoint every this many episodes; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "lr2".into(),
            seed: 1,
            seeds: Vec::new(),
            replicates: 1,
            episodes: 2000,
            timesteps: 20,
            arenas: 1,
            workers: 1,
            learners: 1,
            output_dir: "runs".into(),
            step_log_every: 0,
            snapshot_episodes: Vec::new(),
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub t: OneOrMany,
    pub s: OneOrMany,
    /// Inclusive sweep range; replaces `t` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_range: Option<[f64; 2]>,
    pub step: f64,
}

impl Default for GameSection {
    fn default() -> Self {
        GameSection {
            t: OneOrMany::One(1.1),
            s: OneOrMany::One(-0.1),
            t_range: None,
            s_range: None,
            step: 0.1,
        }
    }
}

fn grid(range: Option<[f64; 2]>, explicit: &OneOrMany, step: f64) -> Result<Vec<f64>> {
    let values = match range {
        None => explicit.values(),
        Some([lo, hi]) => {
            if !(step > 0.0) || hi < lo {
                return Err(Error::Config(format!("bad sweep range [{lo}, {hi}] step {step}")));
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
        }
    };
    if values.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    /// `von_neumann`, `moore`, `honeycomb` or `well_mixed`.
    pub kind: String,
    pub side: usize,
    /// Population and degree for `well_mixed`.
    pub n: usize,
    pub k: usize,
    pub resample: bool,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            kind: "von_neumann".into(),
            side: 10,
            n: 100,
            k: 4,
            resample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    /// `lr2`, `dd`, `ippo` or `norm:{sj,ss,sh,is}`.
    pub name: String,
    pub adversarial_fraction: f64,
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection {
            name: "lr2".into(),
            adversarial_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub beta: f64,
    pub mu: f64,
    pub gamma: f64,
    pub lr: f64,
    pub gae_lambda: f64,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub value_clip: f64,
    pub vf_coef: f64,
    pub alpha: f64,
    pub entropy_start: f64,
    pub entropy_end: f64,
    pub entropy_anneal: f64,
    pub assessment_mode: AssessmentMode,
    pub dilemma_rule: DilemmaRule,
    pub eval_optimizer: EvalOptimizer,
    pub eval_baseline: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shaping_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_lr: Option<f64>,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let h = Hyperparameters::default();
        LearnerSection {
            beta: h.beta,
            mu: h.mu,
            gamma: h.gamma,
            lr: h.lr,
            gae_lambda: h.gae_lambda,
            ppo_clip: h.ppo_clip,
            ppo_epochs: h.ppo_epochs,
            minibatch_size: h.minibatch_size,
            value_clip: h.value_clip,
            vf_coef: h.vf_coef,
            alpha: h.alpha,
            entropy_start: h.entropy.start,
            entropy_end: h.entropy.end,
            entropy_anneal: h.entropy_anneal,
            assessment_mode: h.assessment_mode,
            dilemma_rule: h.dilemma_rule,
            eval_optimizer: h.eval_optimizer,
            eval_baseline: h.eval_baseline,
            shaping_lr: h.shaping_lr,
            eval_lr: h.eval_lr,
        }
    }
}

impl LearnerSection {
    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            beta: self.beta,
            mu: self.mu,
            gamma: self.gamma,
            entropy: EntropySchedule {
                start: self.entropy_start,
                end: self.entropy_end,
                horizon: 1,
            },
            entropy_anneal: self.entropy_anneal,
            lr: self.lr,
            gae_lambda: self.gae_lambda,
            ppo_clip: self.ppo_clip,
            ppo_epochs: self.ppo_epochs,
            minibatch_size: self.minibatch_size,
            value_clip: self.value_clip,
            vf_coef: self.vf_coef,
            alpha: self.alpha,
            assessment_mode: self.assessment_mode,
            dilemma_rule: self.dilemma_rule,
            eval_optimizer: self.eval_optimizer,
            eval_baseline: self.eval_baseline,
            shaping_lr: self.shaping_lr,
            eval_lr: self.eval_lr,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub game: GameSection,
    pub topology: TopologySection,
    pub method: MethodSection,
    pub learner: LearnerSection,
}

/// One `(T, S)` point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub t: f64,
    pub s: f64,
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push(format!("{key} = {other}")),
        }
    }
}

impl ExperimentConfig {
    /// Parses config text, then applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        // Deserialise the file alone first so its errors carry line numbers.
        toml::from_str::<ExperimentConfig>(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            apply_override(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. `LR2_OUTPUT_DIR` replaces `run.output_dir`
    /// unless an override sets it.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut all = Vec::new();
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            all.push(format!("run.output_dir={}", toml::Value::String(dir)));
        }
        all.extend_from_slice(overrides);
        Self::parse(&text, &all).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Effective configuration as dotted `key = value` lines.
    pub fn to_dotted(&self) -> String {
        let table = toml::Table::try_from(self).expect("config serialises");
        let mut lines = Vec::new();
        flatten("", &table, &mut lines);
        lines.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.replicates == 0 && self.run.seeds.is_empty() {
            return Err(Error::Config("run.replicates must be at least 1".into()));
        }
        if self.run.episodes == 0 || self.run.timesteps == 0 || self.run.arenas == 0 {
            return Err(Error::Config("run.episodes, run.timesteps and run.arenas must be positive".into()));
        }
        let method = self.method()?;
        if !(0.0..=1.0).contains(&self.method.adversarial_fraction) {
            return Err(Error::Config("method.adversarial_fraction must lie in [0, 1]".into()));
        }
        if self.method.adversarial_fraction > 0.0 && method != Method::Lr2 {
            return Err(Error::Config("method.adversarial_fraction needs method.name = \"lr2\"".into()));
        }
        let kind = self.topology_kind()?;
        if !self.run.snapshot_episodes.is_empty() && !kind.is_lattice() {
            return Err(Error::Config("snapshots need a lattice topology".into()));
        }
        self.learner
            .hyperparameters()
            .validate()
            .map_err(|e| Error::Config(format!("learner: {e}")))?;
        for c in self.cells()? {
            make_payoff_matrix(c.t, c.s)?;
        }
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        Method::parse(&self.method.name).ok_or_else(|| {
            Error::Config(format!(
                "method.name = `{}`; expected lr2, dd, ippo or norm:{{sj,ss,sh,is}}",
                self.method.name
            ))
        })
    }

    pub fn topology_kind(&self) -> Result<TopologyKind> {
        Ok(match self.topology.kind.as_str() {
            "von_neumann" => TopologyKind::LatticeVonNeumann,
            "moore" => TopologyKind::LatticeMoore,
            "honeycomb" => TopologyKind::Honeycomb,
            "well_mixed" => TopologyKind::WellMixed { k: self.topology.k },
            other => {
                return Err(Error::Config(format!(
                    "topology.kind = `{other}`; expected von_neumann, moore, honeycomb or well_mixed"
                )))
            }
        })
    }

    pub fn graph(&self, seed: u64) -> Result<NeighborGraph> {
        match self.topology_kind()? {
            TopologyKind::WellMixed { k } => build_well_mixed_with(self.topology.n, k, seed, self.topology.resample),
            kind => build_lattice(self.topology.side, kind),
        }
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        let ts = grid(self.game.t_range, &self.game.t, self.game.step)?;
        let ss = grid(self.game.s_range, &self.game.s, self.game.step)?;
        Ok(ts
            .iter()
            .flat_map(|&t| ss.iter().map(move |&s| Cell { t, s }))
            .collect())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.run.seeds.is_empty() {
            (0..self.run.replicates as u64).map(|r| self.run.seed + r).collect()
        } else {
            self.run.seeds.clone()
        }
    }

    pub fn arena_config(&self, seed: u64) -> ArenaConfig {
        ArenaConfig {
            n_arenas: self.run.arenas,
            episodes: self.run.episodes,
            timesteps: self.run.timesteps,
            seed,
            workers: self.run.workers,
            learners: self.run.learners,
        }
    }

    pub fn method_config(&self, cell: Cell) -> Result<MethodConfig> {
        Ok(MethodConfig {
            method: self.method()?,
            hyper: self.learner.hyperparameters(),
            payoff: make_payoff_matrix(cell.t, cell.s)?,
            adversarial_fraction: self.method.adversarial_fraction,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        Path::new(&self.run.output_dir).join(&self.run.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_dotted_keys() {
        let cfg = ExperimentConfig::parse(
            "run.name = \"x\"\nrun.episodes = 50\ngame.t = [1.1, 1.3]\nlearner.beta = 0.5\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.run.name, "x");
        assert_eq!(cfg.run.episodes, 50);
        assert_eq!(cfg.cells().unwrap().len(), 2);
        assert_eq!(cfg.learner.beta, 0.5);
        assert_eq!(cfg.learner.mu, 0.2);
        assert_eq!(cfg.method().unwrap(), Method::Lr2);
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = ExperimentConfig::parse(
            "learner.beta = 0.5\n",
            &["learner.beta=0.7".into(), "method.name=norm:is".into(), "run.seeds=[4,5]".into()],
        )
        .unwrap();
        assert_eq!(cfg.learner.beta, 0.7);
        assert_eq!(cfg.method.name, "norm:is");
        assert_eq!(cfg.seeds(), vec![4, 5]);
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = ExperimentConfig::parse("game.t_range = [1.0, 1.3]\ngame.s = [-0.2, -0.1]\n", &[]).unwrap();
        let text = cfg.to_dotted();
        assert!(text.contains("learner.beta = 0.6"));
        let back = ExperimentConfig::parse(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.cells().unwrap().len(), 8);
    }

    #[test]
    fn errors_name_the_problem() {
        let e = ExperimentConfig::parse("run.episodes = \"many\"\n", &[]).unwrap_err().to_string();
        assert!(e.contains("episodes"), "{e}");
        assert!(e.contains("line 1"), "{e}");
        let e = ExperimentConfig::parse("learner.betta = 0.5\n", &[]).unwrap_err().to_string();
        assert!(e.contains("betta"), "{e}");
        assert!(ExperimentConfig::parse("method.name = \"foo\"\n", &[]).is_err());
        assert!(ExperimentConfig::parse("game.t = 2.5\n", &[]).is_err());
        assert!(ExperimentConfig::parse("run.replicates = 0\n", &[]).is_err());
        assert!(ExperimentConfig::parse("method.name = \"dd\"\nmethod.adversarial_fraction = 0.1\n", &[]).is_err());
        assert!(
            ExperimentConfig::parse("topology.kind = \"well_mixed\"\nrun.snapshot_episodes = [1]\n", &[]).is_err()
        );
    }

    #[test]
    fn sweep_grid_is_inclusive() {
        let g = grid(Some([1.0, 2.0]), &OneOrMany::One(0.0), 0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 1.3);
        assert_eq!(*g.last().unwrap(), 2.0);
    }
}
