//! Command-line harness for the `gtraj` models: derive parameters, simulate
//! guided trajectories, filter, predict and verify, driven by one scenario
//! file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
//! error, 5 verification failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod scenario;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Overrides, RunOptions};
use crate::config::ScenarioConfig;
use crate::error::{CliError, CliResult};
use crate::scenario::Scenario;
use crate::verify::VerifyOptions;

#[derive(Debug, Parser)]
#[command(
    name = "gtraj",
    version,
    about = "Guided and destination-directed trajectory models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Overrides `run.runs` (Monte Carlo runs).
    #[arg(long, global = true, value_name = "INT")]
    pub runs: Option<usize>,
    /// Overrides `run.out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write an SVG overlay next to the trajectory CSVs.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Sample without process or measurement noise.
    #[arg(long, global = true)]
    pub zero_noise: bool,
}

#[derive(Debug, Subcommand, Clone)]
pub enum Command {
    /// Write the object's evolution parameters for every interior step.
    Derive,
    /// Sample object/guide trajectories and terminal-gap statistics.
    Simulate,
    /// Monte Carlo Kalman filtering with NEES and RMSE summaries.
    Filter,
    /// n-step prediction with analytic and Monte Carlo MSE.
    Predict,
    /// Run the oracle/property battery on random instances.
    Verify {
        /// Random instances per property.
        #[arg(long, default_value_t = 50)]
        cases: usize,
        /// Corrupt the induced parameters; the battery must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            runs: self.runs,
            out: self.out.clone(),
            plot: self.plot,
            zero_noise: self.zero_noise,
        }
    }

    fn scenario(&self) -> CliResult<(Scenario, RunOptions)> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config PATH is required for this command".into()))?;
        let cfg = ScenarioConfig::load(path)?;
        let opts = RunOptions::resolve(&cfg, &self.overrides())?;
        Ok((Scenario::from_config(cfg)?, opts))
    }
}

/// Execute a parsed command line, returning the console summary.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Derive => {
            let (s, o) = cli.common.scenario()?;
            Ok(commands::derive(&s, &o)?.to_string())
        }
        Command::Simulate => {
            let (s, o) = cli.common.scenario()?;
            Ok(commands::simulate(&s, &o)?.to_string())
        }
        Command::Filter => {
            let (s, o) = cli.common.scenario()?;
            Ok(commands::filter(&s, &o)?.to_string())
        }
        Command::Predict => {
            let (s, o) = cli.common.scenario()?;
            Ok(commands::predict(&s, &o)?.to_string())
        }
        Command::Verify {
            cases,
            inject_fault,
        } => verify_command(&cli.common, *cases, *inject_fault),
    }
}

fn verify_command(common: &Common, cases: usize, inject_fault: bool) -> CliResult<String> {
    let (scenario, seed, out) = match &common.config {
        Some(_) => {
            let (s, o) = common.scenario()?;
            (Some(s), o.seed, o.out_dir)
        }
        None => (
            None,
            common.seed.unwrap_or(0),
            common.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        ),
    };
    let opts = VerifyOptions {
        seed,
        cases,
        inject_fault,
    };
    let report = verify::run_battery(opts, scenario.as_ref())?;
    let text = report.to_string();
    let dir = output::ensure_dir(&out)?;
    output::write_text(&dir.join("verify.txt"), &format!("{text}\n"))?;
    if report.passed() {
        Ok(text)
    } else {
        Err(CliError::Verification(format!(
            "{} of {} checks failed\n{text}",
            report.failures(),
            report.checks.len()
        )))
    }
}
