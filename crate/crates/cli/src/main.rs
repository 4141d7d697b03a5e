//! `semloc`: annotate frames, fit detector noise, build object maps,
//! localize against them, simulate worlds and evaluate results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::error;

use semloc_core::localizer::SensorModel;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "semloc", version, about = "Object maps over floor plans and Monte Carlo localization against them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration. Relative paths in it are resolved against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repetitions of `localize`.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// object, edt, d or o.
    #[arg(long, global = true)]
    sensor_model: Option<SensorModel>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Label posed frames with visible ground-truth objects.
    Annotate,
    /// Fit per-class center-offset models from predictions.
    FitNoise,
    /// Build an object map from posed 3D detections.
    BuildMap,
    /// Run the particle filter over an event stream.
    Localize,
    /// Generate a synthetic world with every input stream.
    Simulate,
    /// Score maps and localization runs.
    Eval,
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        runs: cli.runs,
        sensor_model: cli.sensor_model,
        jobs: cli.jobs,
        out: cli.out,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global().context("configuring the thread pool")?;
    }
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    match cli.command {
        Command::Annotate => commands::annotate(&cfg),
        Command::FitNoise => commands::fit_noise(&cfg),
        Command::BuildMap => commands::build_map(&cfg),
        Command::Localize => commands::localize(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Eval => commands::eval(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SEMLOC_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
