use advlab::config::ExperimentConfig;
use advlab::eval::TransferMode;
use advlab::pipeline::{self, PipelineError};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Adversarial-attack laboratory for small RL policies.
#[derive(Parser)]
#[command(name = "advlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the policy pool and write checkpoints, curves, and a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// White-box FGSM sweep over the selected policies.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Manifest written by `train` (defaults to <out>/manifest.toml).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Black-box transfer matrix across seeds or algorithms.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// policy | algorithm
        #[arg(long)]
        mode: TransferModeArg,
    },
    /// Render SVG figures from evaluation CSVs.
    Report {
        /// Evaluation CSV files to chart.
        #[arg(long, required = true, num_args = 1..)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: train, attack, both transfers, report.
    All {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, clap::ValueEnum)]
enum TransferModeArg {
    Policy,
    Algorithm,
}

impl From<TransferModeArg> for TransferMode {
    fn from(arg: TransferModeArg) -> Self {
        match arg {
            TransferModeArg::Policy => TransferMode::Policy,
            TransferModeArg::Algorithm => TransferMode::Algorithm,
        }
    }
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig, PipelineError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        config.experiment.output_dir = out;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Train { config, out } => {
            let config = load_config(&config, out)?;
            let manifest = pipeline::cmd_train(&config)?;
            println!(
                "trained {} policies ({} diverged), selected: {}",
                manifest.policies.len(),
                manifest.failures.len(),
                manifest.selected_ids().join(", ")
            );
        }
        Command::Attack {
            config,
            out,
            manifest,
        } => {
            let config = load_config(&config, out)?;
            let manifest = manifest.unwrap_or_else(|| pipeline::manifest_path(&config));
            let path = pipeline::cmd_attack(&config, &manifest)?;
            println!("wrote {}", path.display());
        }
        Command::Transfer {
            config,
            out,
            manifest,
            mode,
        } => {
            let config = load_config(&config, out)?;
            let manifest = manifest.unwrap_or_else(|| pipeline::manifest_path(&config));
            let path = pipeline::cmd_transfer(&config, &manifest, mode.into())?;
            println!("wrote {}", path.display());
        }
        Command::Report { csv, out } => {
            let figures = pipeline::cmd_report(&csv, &out)?;
            for figure in figures {
                println!("wrote {}", figure.display());
            }
        }
        Command::All { config, out } => {
            let config = load_config(&config, out)?;
            let manifest = pipeline::run_all(&config)?;
            println!(
                "pipeline complete: {} reports, {} figures",
                manifest.reports.len(),
                manifest.figures.len()
            );
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}: {e}", e.category());
        std::process::exit(1);
    }
}
