//! Experiment configuration: a single human-readable TOML file describing
//! the model, solver settings, simulation settings, sweep grid, and output
//! paths. Matrices are row-major. A config emitted by
//! [`ExperimentConfig::to_toml_string`] reparses to an identical value.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DelayPmf, MarkovControlModel, ModelError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    BisecMrvi,
    Fpbi,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::BisecMrvi => "bisec-mrvi",
            Algorithm::Fpbi => "fpbi",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bisec-mrvi" => Ok(Algorithm::BisecMrvi),
            "fpbi" => Ok(Algorithm::Fpbi),
            other => Err(format!(
                "unknown algorithm `{other}` (expected bisec-mrvi or fpbi)"
            )),
        }
    }
}

/// Fully resolved experiment description with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub solver: SolverSection,
    pub sim: SimSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub states: usize,
    pub actions: usize,
    /// One row-major |S|x|S| matrix per action.
    pub kernels: Vec<Vec<f64>>,
    /// Row-major |S|x|A| cost table.
    pub cost: Vec<f64>,
    pub delay: DelaySection,
    pub z_max: u32,
}

/// Resolved delay pmf; the two-point shorthand expands into this form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySection {
    pub support: Vec<u32>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub tol: f64,
    pub tau: f64,
    pub max_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    pub horizon: u64,
    pub seed: u64,
    pub burn_in: u64,
    pub initial_state: usize,
    pub initial_age: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

// Raw mirror of the file contents, before defaults and shorthand expansion.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    solver: Option<RawSolver>,
    sim: Option<RawSim>,
    sweep: Option<RawSweep>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    states: usize,
    actions: usize,
    kernels: Vec<Vec<f64>>,
    cost: Vec<f64>,
    delay: RawDelay,
    z_max: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelay {
    support: Option<Vec<u32>>,
    probs: Option<Vec<f64>>,
    p: Option<f64>,
    y_low: Option<u32>,
    y_high: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    algorithm: Option<Algorithm>,
    epsilon: Option<f64>,
    tol: Option<f64>,
    tau: Option<f64>,
    max_sweeps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    horizon: Option<u64>,
    seed: Option<u64>,
    burn_in: Option<u64>,
    initial_state: Option<usize>,
    initial_age: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    p: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

const DEFAULT_Z_MAX: u32 = 20;
const DEFAULT_HORIZON: u64 = 1_000_000;

impl ExperimentConfig {
    pub fn parse_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        resolve(raw)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Builds and validates the model described by this config.
    pub fn build_model(&self) -> Result<MarkovControlModel, ConfigError> {
        let m = &self.model;
        if m.kernels.len() != m.actions {
            return Err(ConfigError::Invalid(format!(
                "model.kernels has {} matrices but model.actions = {}",
                m.kernels.len(),
                m.actions
            )));
        }
        let mut kernels = Vec::with_capacity(m.actions);
        for (a, flat) in m.kernels.iter().enumerate() {
            if flat.len() != m.states * m.states {
                return Err(ConfigError::Invalid(format!(
                    "model.kernels[{a}] has {} entries, expected {} for a {}x{} matrix",
                    flat.len(),
                    m.states * m.states,
                    m.states,
                    m.states
                )));
            }
            kernels.push(DMatrix::from_row_slice(m.states, m.states, flat));
        }
        if m.cost.len() != m.states * m.actions {
            return Err(ConfigError::Invalid(format!(
                "model.cost has {} entries, expected {} for {} states x {} actions",
                m.cost.len(),
                m.states * m.actions,
                m.states,
                m.actions
            )));
        }
        let cost = DMatrix::from_row_slice(m.states, m.actions, &m.cost);
        let delay = DelayPmf::new(m.delay.support.clone(), m.delay.probs.clone())?;
        Ok(MarkovControlModel::new(kernels, cost, delay, m.z_max)?)
    }
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let delay = resolve_delay(&raw.model.delay)?;
    let min_delay = *delay
        .support
        .iter()
        .min()
        .ok_or_else(|| ConfigError::Invalid("model.delay.support is empty".into()))?;

    let solver = raw.solver.unwrap_or(RawSolver {
        algorithm: None,
        epsilon: None,
        tol: None,
        tau: None,
        max_sweeps: None,
    });
    let sim = raw.sim.unwrap_or(RawSim {
        horizon: None,
        seed: None,
        burn_in: None,
        initial_state: None,
        initial_age: None,
    });
    let horizon = sim.horizon.unwrap_or(DEFAULT_HORIZON);
    let burn_in = sim.burn_in.unwrap_or(horizon / 100);
    if burn_in >= horizon {
        return Err(ConfigError::Invalid(format!(
            "sim.burn_in = {burn_in} must be smaller than sim.horizon = {horizon}"
        )));
    }
    let initial_state = sim.initial_state.unwrap_or(0);
    if initial_state >= raw.model.states {
        return Err(ConfigError::Invalid(format!(
            "sim.initial_state = {initial_state} out of range for {} states",
            raw.model.states
        )));
    }

    Ok(ExperimentConfig {
        model: ModelSection {
            states: raw.model.states,
            actions: raw.model.actions,
            kernels: raw.model.kernels,
            cost: raw.model.cost,
            delay,
            z_max: raw.model.z_max.unwrap_or(DEFAULT_Z_MAX),
        },
        solver: SolverSection {
            algorithm: solver.algorithm.unwrap_or(Algorithm::Fpbi),
            epsilon: solver.epsilon.unwrap_or(1e-6),
            tol: solver.tol.unwrap_or(1e-9),
            tau: solver.tau.unwrap_or(0.5),
            max_sweeps: solver.max_sweeps.unwrap_or(100_000),
        },
        sim: SimSection {
            horizon,
            seed: sim.seed.unwrap_or(0),
            burn_in,
            initial_state,
            initial_age: sim.initial_age.unwrap_or(min_delay),
        },
        sweep: SweepSection {
            p: raw
                .sweep
                .and_then(|s| s.p)
                .unwrap_or_else(|| (1..=9).map(|k| k as f64 / 10.0).collect()),
        },
        output: OutputSection {
            dir: raw
                .output
                .and_then(|o| o.dir)
                .unwrap_or_else(|| PathBuf::from("out")),
        },
    })
}

fn resolve_delay(raw: &RawDelay) -> Result<DelaySection, ConfigError> {
    let explicit = raw.support.is_some() || raw.probs.is_some();
    let shorthand = raw.p.is_some() || raw.y_low.is_some() || raw.y_high.is_some();
    match (explicit, shorthand) {
        (true, true) => Err(ConfigError::Invalid(
            "model.delay: give either support+probs or the two-point p/y_low/y_high shorthand, not both"
                .into(),
        )),
        (false, false) => Err(ConfigError::Invalid(
            "model.delay: specify support+probs or p/y_low/y_high".into(),
        )),
        (true, false) => {
            let support = raw
                .support
                .clone()
                .ok_or_else(|| ConfigError::Invalid("model.delay.support missing".into()))?;
            let probs = raw
                .probs
                .clone()
                .ok_or_else(|| ConfigError::Invalid("model.delay.probs missing".into()))?;
            Ok(DelaySection { support, probs })
        }
        (false, true) => {
            let p = raw
                .p
                .ok_or_else(|| ConfigError::Invalid("model.delay.p missing".into()))?;
            let y_low = raw
                .y_low
                .ok_or_else(|| ConfigError::Invalid("model.delay.y_low missing".into()))?;
            let y_high = raw
                .y_high
                .ok_or_else(|| ConfigError::Invalid("model.delay.y_high missing".into()))?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "model.delay.p = {p} must lie in (0, 1]"
                )));
            }
            let pmf = DelayPmf::two_point(p, y_low, y_high)?;
            Ok(DelaySection {
                support: pmf.support().to_vec(),
                probs: pmf.probs().to_vec(),
            })
        }
    }
}
