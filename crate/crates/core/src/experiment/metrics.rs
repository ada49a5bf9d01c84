//! Per-episode metrics rows, the long-format step stream and tail averages.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::arena::{strategy_conditioned_stats, EpisodeReport};
use crate::error::{Error, Result};

/// Columns of `metrics.csv`, in order.
pub const METRICS_COLUMNS: [&str; 17] = [
    "run_id",
    "method",
    "T",
    "S",
    "replicate",
    "seed",
    "episode",
    "cooperation",
    "reward_c",
    "reward_d",
    "reputation_c",
    "reputation_d",
    "policy_loss",
    "value_loss",
    "entropy",
    "eval_grad_norm",
    "disagreement",
];

/// Columns of `steps.csv`, in order.
pub const STEP_COLUMNS: [&str; 6] = ["run_id", "arena", "episode", "step", "metric", "value"];

/// Tail length for final cooperation.
pub const TAIL_EPISODES: usize = 10;

mod na {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("NA"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "NA" {
            return Ok(None);
        }
        raw.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub method: String,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub replicate: usize,
    pub seed: u64,
    pub episode: u64,
    pub cooperation: f64,
    #[serde(with = "na")]
    pub reward_c: Option<f64>,
    #[serde(with = "na")]
    pub reward_d: Option<f64>,
    #[serde(with = "na")]
    pub reputation_c: Option<f64>,
    #[serde(with = "na")]
    pub reputation_d: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    #[serde(with = "na")]
    pub eval_grad_norm: Option<f64>,
    #[serde(with = "na")]
    pub disagreement: Option<f64>,
}

/// Identity of the run a record belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunKey {
    pub run_id: String,
    pub method: String,
    pub t: f64,
    pub s: f64,
    pub replicate: usize,
    pub seed: u64,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Pools every (arena, agent, step) sample of an episode.
pub fn episode_record(key: &RunKey, report: &EpisodeReport<'_>) -> MetricsRecord {
    let mut coop = Mean::default();
    let (mut rc, mut rd, mut pc, mut pd) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
    let (mut pl, mut vl, mut ent) = (Mean::default(), Mean::default(), Mean::default());
    let (mut grad, mut dis) = (Mean::default(), Mean::default());
    for out in report.arenas {
        coop.add(out.mean_cooperation());
        for tr in &out.trajectories {
            for (t, a) in tr.actions.iter().enumerate() {
                if a.is_cooperate() {
                    rc.add(tr.rewards[t]);
                    pc.add(tr.reputation[t]);
                } else {
                    rd.add(tr.rewards[t]);
                    pd.add(tr.reputation[t]);
                }
            }
        }
        for s in &out.dilemma_stats {
            pl.add(s.policy_loss);
            vl.add(s.value_loss);
            ent.add(s.entropy);
        }
        for s in out.eval_stats.iter().flatten() {
            grad.add(s.grad_norm);
            dis.add(s.disagreement);
        }
    }
    MetricsRecord {
        run_id: key.run_id.clone(),
        method: key.method.clone(),
        t: key.t,
        s: key.s,
        replicate: key.replicate,
        seed: key.seed,
        episode: report.episode,
        cooperation: coop.get().unwrap_or(0.0),
        reward_c: rc.get(),
        reward_d: rd.get(),
        reputation_c: pc.get(),
        reputation_d: pd.get(),
        policy_loss: pl.get().unwrap_or(0.0),
        value_loss: vl.get().unwrap_or(0.0),
        entropy: ent.get().unwrap_or(0.0),
        eval_grad_norm: grad.get(),
        disagreement: dis.get(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub run_id: String,
    pub arena: usize,
    pub episode: u64,
    pub step: usize,
    pub metric: &'static str,
    #[serde(serialize_with = "na::serialize")]
    pub value: Option<f64>,
}

/// Per-step cooperation and strategy-conditioned stats for every arena.
pub fn step_records(run_id: &str, report: &EpisodeReport<'_>) -> Vec<StepRecord> {
    let mut rows = Vec::new();
    for (a, out) in report.arenas.iter().enumerate() {
        let stats = strategy_conditioned_stats(&out.trajectories);
        for (t, (c, st)) in out.cooperation.iter().zip(&stats).enumerate() {
            let metrics = [
                ("cooperation", Some(*c)),
                ("reward_c", st.reward_c),
                ("reward_d", st.reward_d),
                ("reputation_c", st.reputation_c),
                ("reputation_d", st.reputation_d),
            ];
            for (metric, value) in metrics {
                rows.push(StepRecord {
                    run_id: run_id.to_string(),
                    arena: a,
                    episode: report.episode,
                    step: t,
                    metric,
                    value,
                });
            }
        }
    }
    rows
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

pub fn write_record<W: Write, R: Serialize>(w: &mut csv::Writer<W>, record: &R) -> Result<()> {
    w.serialize(record).map_err(csv_error)
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("unexpected metrics header: {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    reader.deserialize().map(|r| r.map_err(csv_error)).collect()
}

/// Mean cooperation over each replicate's last ten episodes, then over replicates.
pub fn final_cooperation(records: &[MetricsRecord]) -> Result<f64> {
    let mut by_rep: BTreeMap<usize, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        by_rep.entry(r.replicate).or_default().push(r);
    }
    if by_rep.is_empty() {
        return Err(Error::InsufficientEpisodes {
            needed: TAIL_EPISODES,
            have: 0,
        });
    }
    let mut total = 0.0;
    for rows in by_rep.values_mut() {
        if rows.len() < TAIL_EPISODES {
            return Err(Error::InsufficientEpisodes {
                needed: TAIL_EPISODES,
                have: rows.len(),
            });
        }
        rows.sort_by_key(|r| r.episode);
        let tail = &rows[rows.len() - TAIL_EPISODES..];
        total += tail.iter().map(|r| r.cooperation).sum::<f64>() / TAIL_EPISODES as f64;
    }
    Ok(total / by_rep.len() as f64)
}
