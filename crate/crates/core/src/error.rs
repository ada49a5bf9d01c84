use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid payoff: {name} = {value} outside [{lo}, {hi}]")]
    PayoffOutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("agent {agent} has no neighbours")]
    EmptyNeighbourhood { agent: usize },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("agent index {index} out of range for population of {n_agents}")]
    AgentOutOfRange { index: usize, n_agents: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward called on {0}")]
    Tape(&'static str),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite loss in {context}: {detail}")]
    NonFiniteLoss { context: &'static str, detail: String },

    #[error("invalid probability distribution: {0}")]
    Distribution(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("missing assessment: assessor {assessor} -> target {target}")]
    MissingAssessment { assessor: usize, target: usize },

    #[error("evaluation update needs retained neighbour intermediates; enable cross-validation rollouts ({0})")]
    MissingIntermediates(String),

    #[error("insufficient episodes: need {needed}, have {have}")]
    InsufficientEpisodes { needed: usize, have: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
