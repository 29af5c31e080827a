//! `lionsderiv` command-line tool.
//!
//! Exit codes: 0 success, 1 input error, 2 config error, 3 non-converged,
//! 4 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lionsderiv::estimator::DifferenceMode;
use thiserror::Error;

use config::{LevelRange, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lionsderiv", version, about = "Lions derivatives of law-invariant functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the derivative grid, refining until successive levels agree.
    Estimate(RunArgs),
    /// Run every applicable verification check.
    Verify(RunArgs),
    /// Tabulate quantization and derivative errors per level.
    Study(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample or measure file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Functional as JSON, e.g. '{"name":"variance"}', or a bare name.
    #[arg(long)]
    functional: Option<String>,
    /// Single quantization level.
    #[arg(long)]
    level: Option<u32>,
    /// Inclusive level range `a..b`.
    #[arg(long)]
    levels: Option<LevelRange>,
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    ratio: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    mode: Option<DifferenceMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self, command: &str) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let functional = self
            .functional
            .map(|s| {
                serde_json::from_str(&s).or_else(|_| {
                    if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                        Ok(serde_json::json!({ "name": s }))
                    } else {
                        Err(CliError::Config(format!("--functional is not valid JSON: {s}")))
                    }
                })
            })
            .transpose()?;
        let flags = RunConfig {
            command: Some(command.to_string()),
            functional,
            input: self.input,
            level: self.level,
            levels: self.levels,
            eps0: self.eps0,
            ratio: self.ratio,
            count: self.count,
            mode: self.mode,
            tol: self.tol,
            seed: self.seed,
            out: self.out,
        };
        let cfg = base.overridden_by(flags);
        config::validate(&cfg)?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Estimate(a) => commands::estimate(&a.into_config("estimate")?),
        Command::Verify(a) => commands::verify(&a.into_config("verify")?),
        Command::Study(a) => commands::study(&a.into_config("study")?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
