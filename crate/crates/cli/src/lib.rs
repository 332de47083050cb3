//! Experiment harness for DAE-PGD: training, recovery sweeps and theory reports.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Config, Loaded};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "dae-pgd", version, about = "Denoising-autoencoder priors for linear inverse problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML experiment config.
    pub config: PathBuf,
    /// Override a config value, e.g. `--set train.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Override `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `output_dir` (takes precedence over DAE_PGD_OUTPUT_DIR).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, short)]
    pub quiet: bool,
}

impl Common {
    pub fn load(&self) -> Result<Loaded> {
        let mut ov = self.overrides.clone();
        if let Some(s) = self.seed {
            ov.push(format!("seed={s}"));
        }
        if let Some(dir) = &self.output_dir {
            ov.push(format!("output_dir={}", toml::Value::String(dir.display().to_string())));
        }
        config::load(&self.config, &ov)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the denoising autoencoder.
    Train(Common),
    /// Run the configured recovery problem with every configured solver.
    Recover(Common),
    /// Estimate the convergence constants and check the error bound.
    Theory(Common),
    /// Show the effective config, checkpoint and output manifest.
    Info(Common),
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Train(c) | Command::Recover(c) | Command::Theory(c) | Command::Info(c) => c,
    };
    let loaded = common.load()?;
    let quiet = common.quiet;
    let mut log = |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Train(_) => {
            let out = commands::train::run(&loaded, &mut log)?;
            log(&format!("checkpoint written to {}", out.checkpoint.display()));
        }
        Command::Recover(_) => {
            let out = commands::recover::run(&loaded, &mut log)?;
            log(&format!("{} rows written to {}", out.rows.len(), out.results_csv.display()));
        }
        Command::Theory(_) => {
            let out = commands::theory::run(&loaded, &mut log)?;
            log(&format!("theory report written to {}", out.theory_csv.display()));
        }
        Command::Info(_) => print!("{}", commands::info::run(&loaded)?),
    }
    Ok(())
}
