//! Stage orchestration behind the CLI: train the policy pool, sweep
//! white-box attacks, run transfer matrices, and render figures, with a
//! manifest recording every artifact.
//!
//! Training seeds and evaluation cells run concurrently; all file writes
//! happen after a deterministic merge, so reruns from the same config
//! reproduce every CSV and SVG byte for byte.

use crate::config::{
    ConfigError, ExperimentConfig, FailureEntry, PolicyEntry, RunManifest, TimingEntry,
};
use crate::envs::EnvError;
use crate::eval::{
    transfer_matrix, whitebox_sweep, EvalError, EvalReport, PolicyPool, TransferMode,
};
use crate::policy::{load_checkpoint, save_checkpoint, PolicyError};
use crate::training::{
    select_top_policies, train_dqn, train_pg, Algorithm, TrainError, TrainOutcome, TrainingCurve,
};
use crate::attacks::AttackSpec;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Attack(#[from] crate::attacks::AttackError),
}

impl PipelineError {
    /// Stable one-word category for machine-parsable CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            PipelineError::Config(ConfigError::Parse(_)) => "config-parse",
            PipelineError::Config(ConfigError::Invalid(_)) => "config-invalid",
            PipelineError::Config(ConfigError::MissingFile(_)) => "manifest-missing-file",
            PipelineError::Config(_) => "config-io",
            PipelineError::Train(TrainError::Diverged { .. }) => "training-diverged",
            PipelineError::Train(_) => "training",
            PipelineError::Eval(EvalError::InsufficientPool(_)) => "insufficient-pool",
            PipelineError::Eval(EvalError::Schema(_)) => "csv-schema",
            PipelineError::Eval(_) => "evaluation",
            PipelineError::Policy(_) => "policy",
            PipelineError::Env(_) => "environment",
            PipelineError::MissingCheckpoint(_) => "checkpoint-missing",
            PipelineError::Io(_) => "io",
            PipelineError::Attack(_) => "attack",
        }
    }
}

fn ensure_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn write_curve_csv(path: &Path, curve: &TrainingCurve) -> Result<(), PipelineError> {
    let mut text = String::from("iteration,mean_return\n");
    for (i, point) in curve.points.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i, point.mean_return));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn manifest_path(config: &ExperimentConfig) -> PathBuf {
    config.experiment.output_dir.join("manifest.toml")
}

/// Train seeds × algorithms, write checkpoints and curves, select the top
/// performers per algorithm, and record everything in the manifest.
/// Diverged seeds are recorded as failures; the run continues without them.
pub fn cmd_train(config: &ExperimentConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let out = &config.experiment.output_dir;
    ensure_dir(&out.join("checkpoints"))?;
    ensure_dir(&out.join("curves"))?;

    let started = Instant::now();
    let mut units = Vec::new();
    for algorithm in Algorithm::ALL {
        for seed in 0..config.experiment.seeds_per_algorithm {
            units.push((algorithm, seed));
        }
    }

    let results: Vec<(Algorithm, u64, Result<TrainOutcome, TrainError>)> = units
        .par_iter()
        .map(|&(algorithm, seed)| {
            let train_config = config.train_config(algorithm, seed);
            let outcome = match algorithm {
                Algorithm::Dqn => train_dqn(&config.env, &train_config),
                Algorithm::Pg => train_pg(&config.env, &train_config),
            };
            (algorithm, seed, outcome)
        })
        .collect();

    let mut manifest = RunManifest::new(config.clone());
    let mut curves_by_algorithm: Vec<(Algorithm, Vec<(u64, TrainingCurve)>)> = Algorithm::ALL
        .iter()
        .map(|&a| (a, Vec::new()))
        .collect();

    for (algorithm, seed, outcome) in results {
        match outcome {
            Ok(TrainOutcome { policy, curve }) => {
                let id = config.policy_id(algorithm, seed);
                let checkpoint = out.join("checkpoints").join(format!("{id}.ckpt"));
                let curve_path = out.join("curves").join(format!("{id}.csv"));
                save_checkpoint(&policy, &checkpoint)?;
                write_curve_csv(&curve_path, &curve)?;
                manifest.policies.push(PolicyEntry {
                    id,
                    algorithm,
                    seed,
                    checkpoint,
                    curve: curve_path,
                    score: curve.score(),
                    selected: false,
                });
                curves_by_algorithm
                    .iter_mut()
                    .find(|(a, _)| *a == algorithm)
                    .expect("all algorithms present")
                    .1
                    .push((seed, curve));
            }
            Err(e @ TrainError::Diverged { .. }) => {
                manifest.failures.push(FailureEntry {
                    algorithm,
                    seed,
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }

    for (algorithm, seed_curves) in &curves_by_algorithm {
        if seed_curves.is_empty() {
            continue;
        }
        let curves: Vec<TrainingCurve> = seed_curves.iter().map(|(_, c)| c.clone()).collect();
        let top = select_top_policies(&curves, config.experiment.top_policy_cap)?;
        for index in top {
            let (seed, _) = &seed_curves[index];
            let id = config.policy_id(*algorithm, *seed);
            if let Some(entry) = manifest.policies.iter_mut().find(|p| p.id == id) {
                entry.selected = true;
            }
        }
    }

    manifest.timings.push(TimingEntry {
        stage: "train".into(),
        seconds: started.elapsed().as_secs_f64(),
    });
    manifest.save(&manifest_path(config))?;
    Ok(manifest)
}

/// Load the selected policies named by a manifest into an evaluation pool.
pub fn load_pool(manifest: &RunManifest) -> Result<PolicyPool, PipelineError> {
    let mut pool = PolicyPool::new();
    for entry in manifest.policies.iter().filter(|p| p.selected) {
        if !entry.checkpoint.exists() {
            return Err(PipelineError::MissingCheckpoint(entry.checkpoint.clone()));
        }
        pool.insert(entry.id.clone(), load_checkpoint(&entry.checkpoint)?);
    }
    Ok(pool)
}

/// White-box ε-sweep over every selected policy; writes one CSV per env.
pub fn cmd_attack(
    config: &ExperimentConfig,
    manifest_file: &Path,
) -> Result<PathBuf, PipelineError> {
    config.validate()?;
    let mut manifest = RunManifest::load(manifest_file)?;
    let pool = load_pool(&manifest)?;
    let started = Instant::now();

    let report = whitebox_sweep(
        &pool,
        &config.experiment.epsilons,
        &config.experiment.norms,
        &config.env,
        config.experiment.rollouts_per_cell,
        config.experiment.eval_seed_base,
    )?;

    let out = config.experiment.output_dir.join("reports");
    ensure_dir(&out)?;
    let path = out.join(format!("{}_whitebox.csv", config.env.kind.name()));
    report.write_csv(&path)?;

    if !manifest.reports.contains(&path) {
        manifest.reports.push(path.clone());
    }
    manifest.timings.push(TimingEntry {
        stage: "attack".into(),
        seconds: started.elapsed().as_secs_f64(),
    });
    manifest.save(manifest_file)?;
    Ok(path)
}

/// Transfer matrix under one mode, swept over the config's (norm, ε) grid;
/// writes one CSV per (env, mode).
pub fn cmd_transfer(
    config: &ExperimentConfig,
    manifest_file: &Path,
    mode: TransferMode,
) -> Result<PathBuf, PipelineError> {
    config.validate()?;
    let mut manifest = RunManifest::load(manifest_file)?;
    let pool = load_pool(&manifest)?;
    let started = Instant::now();

    let mut reports = Vec::new();
    for &norm in &config.experiment.norms {
        for &eps in &config.experiment.epsilons {
            let attack = AttackSpec::new(norm, eps)?;
            reports.push(transfer_matrix(
                &pool,
                mode,
                attack,
                &config.env,
                config.experiment.rollouts_per_cell,
                config.experiment.eval_seed_base,
            )?);
        }
    }
    let report = EvalReport::merge(reports);

    let out = config.experiment.output_dir.join("reports");
    ensure_dir(&out)?;
    let path = out.join(format!(
        "{}_transfer_{}.csv",
        config.env.kind.name(),
        mode
    ));
    report.write_csv(&path)?;

    if !manifest.reports.contains(&path) {
        manifest.reports.push(path.clone());
    }
    manifest.timings.push(TimingEntry {
        stage: format!("transfer-{mode}"),
        seconds: started.elapsed().as_secs_f64(),
    });
    manifest.save(manifest_file)?;
    Ok(path)
}

/// Parse evaluation CSVs and write every figure they support.
pub fn cmd_report(csv_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut rows = Vec::new();
    for path in csv_paths {
        let report = EvalReport::read_csv(path)?;
        rows.extend(report.rows);
    }
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for (name, svg) in crate::report::render_figures(&rows) {
        let path = out_dir.join(name);
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

/// The full pipeline: train, white-box sweep, both transfer modes, figures.
pub fn run_all(config: &ExperimentConfig) -> Result<RunManifest, PipelineError> {
    cmd_train(config)?;
    let manifest_file = manifest_path(config);
    let whitebox = cmd_attack(config, &manifest_file)?;
    let policy = cmd_transfer(config, &manifest_file, TransferMode::Policy)?;
    let algorithm = cmd_transfer(config, &manifest_file, TransferMode::Algorithm)?;

    let figures_dir = config.experiment.output_dir.join("figures");
    let figures = cmd_report(&[whitebox, policy, algorithm], &figures_dir)?;

    let mut manifest = RunManifest::load(&manifest_file)?;
    manifest.figures = figures;
    manifest.save(&manifest_file)?;
    Ok(manifest)
}
