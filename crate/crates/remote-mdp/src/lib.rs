//! Solver-and-simulator toolkit for joint sampling-and-control of a Markov
//! source observed through a random-delay channel.
//!
//! Given a controlled source, a per-slot cost table, and a finite channel
//! delay distribution, the crate builds the equivalent delay-free MDP over
//! the sufficient statistic (sampled state, realized delay, previous
//! action), computes the optimal joint sampling-and-control policy and its
//! long-run average cost by two independent algorithms, evaluates zero-wait
//! and age-optimal threshold benchmarks, and cross-checks everything with a
//! seeded closed-loop simulation.

pub mod analysis;
pub mod augmentation;
pub mod benchmarks;
pub mod cli;
pub mod config;
pub mod model;
pub mod sim;
pub mod solvers;

use thiserror::Error;

pub use crate::augmentation::AugmentedMdp;
pub use crate::model::{AugmentedState, Decision, DelayPmf, MarkovControlModel, StagePolicy};
pub use crate::sim::{SimConfig, SimReport};
pub use crate::solvers::SolveReport;

/// Top-level error type for orchestration code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Augmentation(#[from] augmentation::AugmentationError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Solve(#[from] solvers::SolveError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
