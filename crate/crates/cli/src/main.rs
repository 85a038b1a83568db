//! Batch driver for the review-panel pipeline.
//!
//! Each subcommand runs one stage over the files in the output directory.
//! Configuration comes from an optional key=value file, then repeatable
//! `--set` overrides, then the `--seed` and `--out-dir` flags, in that
//! order of precedence.

mod commands;
mod config;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "revpanel", version, about = "Product-review firm-week panel toolkit")]
struct Cli {
    /// Config file of key = value lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// error, warn, info, debug, or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse review dumps into the deduplicated per-firm store.
    Ingest,
    /// Count reviews, products, and firms in the store.
    Summary,
    /// Build weekly sentiment features from the store.
    Features,
    /// Join the features with market and fundamental controls.
    Panel,
    /// Estimate one regression on the assembled panel.
    Regress,
    /// Render the full set of report tables.
    Tables,
    /// Generate a synthetic review bundle with a planted effect.
    Synth,
    /// Run the estimator Monte Carlo harness.
    Mc,
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &cli.set {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {assignment:?}"))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = effective_config(cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(&config),
        Command::Summary => commands::summary(&config),
        Command::Features => commands::features(&config),
        Command::Panel => commands::panel(&config),
        Command::Regress => commands::regress(&config),
        Command::Tables => commands::run_tables(&config),
        Command::Synth => commands::synth(&config),
        Command::Mc => commands::mc(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
