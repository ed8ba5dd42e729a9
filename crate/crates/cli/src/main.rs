//! `eot`: train desk-scale classifiers, synthesize robust adversarial
//! examples in 2D and 3D, and evaluate them over transformation samples.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use config::{Mode, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "eot", version, about)]
struct Cli {
    #[arg(value_enum)]
    mode: Mode,
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        model: cli.model,
        steps: cli.steps,
        lambda: cli.lambda,
    };
    let cfg = base.resolve(cli.mode, &overrides)?;
    commands::run(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
