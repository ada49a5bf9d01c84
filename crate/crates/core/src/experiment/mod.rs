//! Experiment runner: sweeps over `(T, S)` cells and replicates, writes
//! metrics, snapshots, checkpoints and the replicate-averaged summary.
//!
//! Output layout under `run.output_dir/run.name`:
//!
//! ```text
//! effective.toml              resolved config, dotted keys
//! summary.csv                 T,S,method,mean_cooperation,std_cooperation,replicates
//! failures.txt                one line per failed cell, only when some failed
//! cells/<run_id>/metrics.csv  one row per episode
//! cells/<run_id>/steps.csv    long format, every run.step_log_every episodes
//! cells/<run_id>/snapshots/ep<E>.txt
//! cells/<run_id>/checkpoints/ep<E>/a<arena>_agent<i>_{dilemma,evaluation}.bin
//! ```

pub mod config;
pub mod metrics;
pub mod snapshot;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arena::{run_training, EpisodeReport};
use crate::autodiff::checkpoint;
use crate::error::{Error, Result};

pub use config::{Cell, ExperimentConfig, OUTPUT_DIR_ENV};
pub use metrics::{
    episode_record, final_cooperation, read_metrics, step_records, MetricsRecord, RunKey, METRICS_COLUMNS,
    STEP_COLUMNS, TAIL_EPISODES,
};
pub use snapshot::{export_snapshot, parse_snapshot, render_snapshot, Snapshot, SnapshotHeader};

/// Final cooperation of one `(cell, replicate)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub t: f64,
    pub s: f64,
    pub method: String,
    pub replicate: usize,
    pub final_cooperation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub method: String,
    pub mean_cooperation: f64,
    pub std_cooperation: f64,
    pub replicates: usize,
}

/// Mean and sample standard deviation over replicates, sorted by `(T, S, method)`.
pub fn sweep_summary(results: &[CellResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(i64, i64, &str), (f64, f64, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let key = ((r.t * 1e9).round() as i64, (r.s * 1e9).round() as i64, r.method.as_str());
        groups.entry(key).or_insert((r.t, r.s, Vec::new())).2.push(r.final_cooperation);
    }
    groups
        .into_iter()
        .map(|((_, _, method), (t, s, xs))| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SummaryRow {
                t,
                s,
                method: method.to_string(),
                mean_cooperation: mean,
                std_cooperation: var.sqrt(),
                replicates: xs.len(),
            }
        })
        .collect()
}

pub fn run_id(name: &str, method: &str, cell: Cell, replicate: usize) -> String {
    let method = method.replace(':', "-");
    format!("{name}_{method}_T{}_S{}_r{replicate}", cell.t, cell.s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn flush<W: std::io::Write>(w: csv::Writer<W>, path: &Path) -> Result<()> {
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn write_checkpoint(dir: &Path, report: &EpisodeReport<'_>) -> Result<()> {
    create_dir(dir)?;
    for (a, agents) in report.agents.iter().enumerate() {
        for (i, agent) in agents.iter().enumerate() {
            write_file(
                &dir.join(format!("a{a}_agent{i}_dilemma.bin")),
                checkpoint::encode(&agent.dilemma),
            )?;
            if let Some(eta) = &agent.evaluation {
                write_file(&dir.join(format!("a{a}_agent{i}_evaluation.bin")), checkpoint::encode(eta))?;
            }
        }
    }
    Ok(())
}

/// Trains one `(cell, replicate)` and writes its artifacts. Returns the
/// episode records.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell, replicate: usize, seed: u64, dir: &Path) -> Result<Vec<MetricsRecord>> {
    let method = cfg.method()?;
    let key = RunKey {
        run_id: run_id(&cfg.run.name, &method.name(), cell, replicate),
        method: method.name(),
        t: cell.t,
        s: cell.s,
        replicate,
        seed,
    };
    let cell_dir = dir.join("cells").join(&key.run_id);
    create_dir(&cell_dir)?;
    let graph = cfg.graph(seed)?;
    let metrics_path = cell_dir.join("metrics.csv");
    let steps_path = cell_dir.join("steps.csv");
    let mut metrics = metrics::csv_writer(create_file(&metrics_path)?);
    let mut steps = if cfg.run.step_log_every > 0 {
        Some(metrics::csv_writer(create_file(&steps_path)?))
    } else {
        None
    };
    let mut records = Vec::with_capacity(cfg.run.episodes as usize);
    let mut observe = |report: &EpisodeReport<'_>| -> Result<()> {
        let record = episode_record(&key, report);
        metrics::write_record(&mut metrics, &record)?;
        records.push(record);
        let done = report.episode + 1;
        if let Some(w) = steps.as_mut() {
            if done % cfg.run.step_log_every == 0 {
                for row in step_records(&key.run_id, report) {
                    metrics::write_record(w, &row)?;
                }
            }
        }
        if cfg.run.snapshot_episodes.contains(&done) {
            let agents = &report.agents[0];
            let actions: Vec<_> = agents.iter().map(|a| a.last_action).collect();
            let reps: Vec<_> = agents.iter().map(|a| a.reputation).collect();
            let header = SnapshotHeader {
                t: done,
                temptation: cell.t,
                sucker: cell.s,
                seed,
            };
            let path = cell_dir.join("snapshots").join(format!("ep{done}.txt"));
            export_snapshot(&graph, &actions, &reps, header, &path)?;
        }
        if cfg.run.checkpoint_every > 0 && done % cfg.run.checkpoint_every == 0 {
            write_checkpoint(&cell_dir.join("checkpoints").join(format!("ep{done}")), report)?;
        }
        Ok(())
    };
    run_training(&cfg.arena_config(seed), &cfg.method_config(cell)?, &graph, &mut observe)?;
    flush(metrics, &metrics_path)?;
    if let Some(w) = steps {
        flush(w, &steps_path)?;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub run_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

fn write_summary(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    let path = dir.join("summary.csv");
    let mut w = metrics::csv_writer(create_file(&path)?);
    for r in rows {
        metrics::write_record(&mut w, r)?;
    }
    flush(w, &path)
}

/// Runs every `(cell, replicate)`. A failing cell is recorded and the sweep
/// continues.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    run_with_progress(cfg, &mut |_, _| {})
}

pub fn run_with_progress(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str, Option<f64>)) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    create_dir(&dir)?;
    write_file(&dir.join("effective.toml"), cfg.to_dotted())?;
    let method = cfg.method()?.name();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for cell in cfg.cells()? {
        for (replicate, seed) in cfg.seeds().into_iter().enumerate() {
            let id = run_id(&cfg.run.name, &method, cell, replicate);
            match run_cell(cfg, cell, replicate, seed, &dir).and_then(|recs| final_cooperation(&recs)) {
                Ok(fc) => {
                    progress(&id, Some(fc));
                    results.push(CellResult {
                        t: cell.t,
                        s: cell.s,
                        method: method.clone(),
                        replicate,
                        final_cooperation: fc,
                    });
                }
                Err(e) => {
                    progress(&id, None);
                    failures.push(CellFailure {
                        run_id: id,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    let summary = sweep_summary(&results);
    write_summary(&dir, &summary)?;
    if !failures.is_empty() {
        let text: String = failures.iter().map(|f| format!("{}: {}\n", f.run_id, f.error)).collect();
        write_file(&dir.join("failures.txt"), text)?;
    }
    Ok(RunOutcome {
        output_dir: dir,
        summary,
        failures,
    })
}

/// Recomputes `summary.csv` from the per-cell metrics under `dir`.
pub fn report(dir: &Path) -> Result<Vec<SummaryRow>> {
    let cells = dir.join("cells");
    let entries = std::fs::read_dir(&cells).map_err(|e| Error::io(&cells, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("metrics.csv"))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no cells/*/metrics.csv under {}", dir.display())));
    }
    let mut results = Vec::new();
    for path in paths {
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let records = read_metrics(file).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let first = records
            .first()
            .ok_or_else(|| Error::Config(format!("{}: no rows", path.display())))?;
        results.push(CellResult {
            t: first.t,
            s: first.s,
            method: first.method.clone(),
            replicate: first.replicate,
            final_cooperation: final_cooperation(&records)?,
        });
    }
    let summary = sweep_summary(&results);
    write_summary(dir, &summary)?;
    Ok(summary)
}
