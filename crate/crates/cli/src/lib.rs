//! Command-line driver: config parsing, orchestration and report files.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use synthcontrol::panel::ValidationReport;

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("{0}")]
    Violations(ValidationReport),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Violations(_) | CliError::Compute(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "synthcontrol", version, about = "Synthetic control studies from panel CSV files")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a study config against its panel.
    Validate(CommonArgs),
    /// Fit the synthetic control and write weights, gaps and a summary.
    Fit(CommonArgs),
    /// Fit, then run in-space placebos and write p-values.
    Placebo(CommonArgs),
    /// Fit, then run leave-one-out, in-time and restricted-pool variants.
    Robustness(CommonArgs),
    /// Write a simulated factor-model panel and a matching study config.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Study config (simulation design for `simulate`).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the predictor-weight search or the simulator.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Accept donor weights within a 5% optimality margin.
    #[arg(long)]
    pub loose_feasibility: bool,
}

/// Runs one subcommand; human-readable progress goes to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(a) => commands::cmd_validate(a, stdout),
        Command::Fit(a) => commands::cmd_fit(a, stdout).map(|_| ()),
        Command::Placebo(a) => commands::cmd_placebo(a, stdout),
        Command::Robustness(a) => commands::cmd_robustness(a, stdout),
        Command::Simulate(a) => commands::cmd_simulate(a, stdout),
    }
}
