use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lr2_core::experiment::{self, ExperimentConfig};
use lr2_core::selfcheck;

#[derive(Parser)]
#[command(name = "lr2", version, about = "Learned reputation in spatial social dilemmas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (T, S) cell and replicate in a config.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set learner.beta=0.5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Suppress per-cell progress lines.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Recompute summary.csv from a run directory.
    Report { dir: PathBuf },
    /// Run the built-in invariant checks.
    Check,
}

fn run(config: PathBuf, overrides: Vec<String>, quiet: bool) -> ExitCode {
    let cfg = match ExperimentConfig::load(&config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut progress = |id: &str, fc: Option<f64>| {
        if !quiet {
            match fc {
                Some(x) => eprintln!("{id}: final cooperation {x:.3}"),
                None => eprintln!("{id}: FAILED"),
            }
        }
    };
    match experiment::run_with_progress(&cfg, &mut progress) {
        Ok(outcome) => {
            for r in &outcome.summary {
                println!(
                    "T={} S={} {}: {:.3} ± {:.3} (n={})",
                    r.t, r.s, r.method, r.mean_cooperation, r.std_cooperation, r.replicates
                );
            }
            println!("wrote {}", outcome.output_dir.display());
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    eprintln!("failed {}: {}", f.run_id, f.error);
                }
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            quiet,
        } => run(config, overrides, quiet),
        Command::Report { dir } => match experiment::report(&dir) {
            Ok(rows) => {
                println!("T,S,method,mean_cooperation,std_cooperation,replicates");
                for r in rows {
                    println!(
                        "{},{},{},{},{},{}",
                        r.t, r.s, r.method, r.mean_cooperation, r.std_cooperation, r.replicates
                    );
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Check => {
            let results = selfcheck::run_all();
            let mut ok = true;
            for c in &results {
                ok &= c.passed;
                println!("[{}] {} ({})", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
