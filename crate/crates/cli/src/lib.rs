//! Scenario runner for the CoCo pricing engine.

// `!(x > 0.0)` is the NaN-rejecting form of a positivity check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{execute, CommandKind, Outcome};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "coco", version, about = "CoCo bond pricing under short-term uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Scenario seed, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Cross-check outputs against the Monte Carlo oracle.
    #[arg(long, global = true)]
    pub validate: bool,

    /// Correlation sweep, overriding `rho_sweep`.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Stock scenarios and hidden fundamental paths.
    Simulate,
    /// Conditional survival probabilities over the first period.
    Survive,
    /// Bond price and its legs over the first period.
    Price,
    /// Default compensator and its martingale decomposition.
    Compensator,
    /// Oracle cross-checks of the filter and closed forms.
    Validate,
    /// Print the effective configuration as TOML.
    Config,
}

impl Command {
    fn kind(self) -> Option<CommandKind> {
        match self {
            Command::Simulate => Some(CommandKind::Simulate),
            Command::Survive => Some(CommandKind::Survive),
            Command::Price => Some(CommandKind::Price),
            Command::Compensator => Some(CommandKind::Compensator),
            Command::Validate => Some(CommandKind::Validate),
            Command::Config => None,
        }
    }
}

/// Applies the command-line overrides to the loaded configuration.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(rho) = &cli.rho {
        cfg.rho_sweep = rho.clone();
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    let Some(kind) = cli.command.kind() else {
        cfg.validate()?;
        print!("{}", cfg.to_toml()?);
        return Ok(());
    };
    // A manifest replays its own validation setting.
    let recorded = cfg
        .run
        .as_ref()
        .is_some_and(|r| r.validate && r.command == kind.name());
    let Outcome { files, failure } = execute(kind, &cfg, cli.validate || recorded)?;
    for f in &files {
        println!("{}", cfg.output_dir.join(f).display());
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
