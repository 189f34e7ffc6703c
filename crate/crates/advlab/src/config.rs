//! Experiment configuration files and run manifests.
//!
//! A config is one TOML document with three tables: `[env]`, `[experiment]`,
//! and `[training.dqn]` / `[training.pg]`. The manifest written next to a
//! run's outputs snapshots the exact config plus every file the run
//! produced, so an experiment can be audited or re-run from the manifest
//! alone. See the repository README for the field-by-field grammar.

use crate::attacks::NormKind;
use crate::envs::EnvConfig;
use crate::training::{Algorithm, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("manifest references a missing file: {0}")]
    MissingFile(PathBuf),
}

/// The default ε grid: spans the imperceptibility point 0.001 up to values
/// where attack effects saturate, with 0 as the unattacked baseline.
pub const DEFAULT_EPSILONS: [f64; 9] = [
    0.0, 0.0005, 0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064,
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentSection {
    pub seeds_per_algorithm: u64,
    pub top_policy_cap: usize,
    pub epsilons: Vec<f64>,
    pub norms: Vec<NormKind>,
    pub rollouts_per_cell: usize,
    pub eval_seed_base: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingSection {
    pub dqn: TrainConfig,
    pub pg: TrainConfig,
}

/// Everything one experiment needs: the environment, the training
/// hyperparameters per algorithm, and the evaluation grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub experiment: ExperimentSection,
    pub training: TrainingSection,
}

impl ExperimentConfig {
    /// Protocol defaults: five seeds per algorithm, top three kept, ten
    /// rollouts per cell, all three norms over the default ε grid.
    pub fn default_for(env: EnvConfig) -> Self {
        let name = env.kind.name().to_string();
        ExperimentConfig {
            env,
            experiment: ExperimentSection {
                seeds_per_algorithm: 5,
                top_policy_cap: 3,
                epsilons: DEFAULT_EPSILONS.to_vec(),
                norms: NormKind::ALL.to_vec(),
                rollouts_per_cell: 10,
                eval_seed_base: 10_000,
                output_dir: PathBuf::from("out").join(name),
            },
            training: TrainingSection {
                dqn: TrainConfig::dqn(0),
                pg: TrainConfig::pg(0),
            },
        }
    }

    pub fn default_minipong() -> Self {
        Self::default_for(EnvConfig::minipong())
    }

    pub fn default_hazardgrid() -> Self {
        Self::default_for(EnvConfig::hazardgrid())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let eps = &self.experiment.epsilons;
        if eps.is_empty() || !eps.contains(&0.0) {
            return Err(ConfigError::Invalid(
                "epsilons must be non-empty and include 0".into(),
            ));
        }
        if eps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid(
                "epsilons must be strictly ascending".into(),
            ));
        }
        if self.experiment.seeds_per_algorithm == 0 {
            return Err(ConfigError::Invalid("need at least one seed".into()));
        }
        if self.experiment.norms.is_empty() {
            return Err(ConfigError::Invalid("need at least one norm".into()));
        }
        if self.experiment.rollouts_per_cell == 0 {
            return Err(ConfigError::Invalid("need at least one rollout".into()));
        }
        if self.training.dqn.algorithm != Algorithm::Dqn
            || self.training.pg.algorithm != Algorithm::Pg
        {
            return Err(ConfigError::Invalid(
                "training sections must keep their algorithm tags".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        Ok(std::fs::write(path, self.to_toml_string()?)?)
    }

    /// The training config for one (algorithm, seed) run.
    pub fn train_config(&self, algorithm: Algorithm, seed: u64) -> TrainConfig {
        let mut config = match algorithm {
            Algorithm::Dqn => self.training.dqn.clone(),
            Algorithm::Pg => self.training.pg.clone(),
        };
        config.algorithm = algorithm;
        config.seed = seed;
        config
    }

    /// Identifier for one trained policy: `{env}-{algorithm}-s{seed}`.
    pub fn policy_id(&self, algorithm: Algorithm, seed: u64) -> String {
        format!("{}-{}-s{}", self.env.kind.name(), algorithm, seed)
    }
}

/// One trained policy recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyEntry {
    pub id: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    /// Mean return over the last ten training iterations.
    pub score: f64,
    pub selected: bool,
}

/// A seed whose training run diverged; the run continues without it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FailureEntry {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimingEntry {
    pub stage: String,
    pub seconds: f64,
}

/// Snapshot of one run: the exact config, every artifact written, and
/// wall-clock timings. Written by the train stage and extended by the
/// attack/transfer/report stages.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub policies: Vec<PolicyEntry>,
    pub failures: Vec<FailureEntry>,
    pub reports: Vec<PathBuf>,
    pub figures: Vec<PathBuf>,
    pub timings: Vec<TimingEntry>,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            policies: Vec::new(),
            failures: Vec::new(),
            reports: Vec::new(),
            figures: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn selected_ids(&self) -> Vec<&str> {
        self.policies
            .iter()
            .filter(|p| p.selected)
            .map(|p| p.id.as_str())
            .collect()
    }

    /// Every file the manifest references must exist when it is written.
    pub fn validate_files(&self) -> Result<(), ConfigError> {
        let paths = self
            .policies
            .iter()
            .flat_map(|p| [p.checkpoint.as_path(), p.curve.as_path()])
            .chain(self.reports.iter().map(|p| p.as_path()))
            .chain(self.figures.iter().map(|p| p.as_path()));
        for path in paths {
            if !path.exists() {
                return Err(ConfigError::MissingFile(path.to_path_buf()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        self.validate_files()?;
        Ok(std::fs::write(path, toml::to_string_pretty(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }
}
