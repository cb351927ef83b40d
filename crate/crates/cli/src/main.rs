mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wormgraph::parallel::Execution;

use crate::commands::Context;
use crate::config::{load_config, CliConfig};
use crate::error::{CliError, Result};

/// Edge-inferring graph networks for calcium-imaging time series.
#[derive(Parser)]
#[command(name = "wormgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a cohort of synthetic recordings.
    GenSynth,
    /// Train one model on one fold.
    Train,
    /// Train every (permutation, fold) cell of an experiment plan.
    CrossValidate,
    /// Score a checkpoint on recordings.
    Eval,
    /// Per-step free-running rollout error of a predictor checkpoint.
    Rollout,
    /// Principal components of the derivative traces.
    Pca,
    /// Dump the edges a graph checkpoint infers, optionally against a connectome.
    Edges,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenSynth => "gen-synth",
            Command::Train => "train",
            Command::CrossValidate => "cross-validate",
            Command::Eval => "eval",
            Command::Rollout => "rollout",
            Command::Pca => "pca",
            Command::Edges => "edges",
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Continue an interrupted run in the same output directory.
    #[arg(long, global = true, conflicts_with = "force")]
    resume: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Recording file or directory; replaces the configured recordings.
    #[arg(long = "data", global = true)]
    data: Vec<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    connectome: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    let c = cli.common;
    let name = cli.command.name();
    let mut config = match &c.config {
        Some(path) => load_config(path, name)?,
        None => CliConfig::default(),
    };
    if c.seed.is_some() {
        config.seed = c.seed;
    }
    config.seed = Some(config.seed.unwrap_or(0));
    if !c.data.is_empty() {
        config.recordings = c.data;
    }
    config.checkpoint = c.checkpoint.or(config.checkpoint);
    config.connectome = c.connectome.or(config.connectome);
    let out = c
        .out
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::usage("no output directory; pass --out or set `out` in the config"))?;
    let ctx = Context {
        command: name,
        config,
        out,
        force: c.force,
        resume: c.resume,
        execution: Execution::from_workers(c.workers),
    };
    match cli.command {
        Command::GenSynth => commands::gen_synth(&ctx),
        Command::Train => commands::train_cmd(&ctx),
        Command::CrossValidate => commands::cross_validate_cmd(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Rollout => commands::rollout_cmd(&ctx),
        Command::Pca => commands::pca_cmd(&ctx),
        Command::Edges => commands::edges(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
