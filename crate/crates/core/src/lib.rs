//! Learned reputation assessment and reputation-reshaped rewards for
//! multi-agent social dilemmas on spatial and well-mixed populations.

pub mod arena;
pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod game;
pub mod learner;
pub mod parallel;
pub mod reputation;
pub mod rng;
pub mod selfcheck;
pub mod topology;

pub use error::{Error, Result};
