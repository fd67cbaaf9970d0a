//! `bews`: run blade-effective wind speed scenarios and verification checks.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad config or output
//! location, 3 the simulation diverged or produced non-finite values.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bews_core::estimators::GainName;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{parse_perturbation, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("simulation failed: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Output(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bews",
    version,
    about = "Blade-effective wind speed estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed loop and write trace.csv and metrics.json.
    Simulate(CommonArgs),
    /// Export Bode magnitudes of the estimator transfer matrices.
    Bode(CommonArgs),
    /// Check the PIN/Coleman diagonal equivalence and the identified
    /// Coleman response; prints a JSON verdict.
    Verify(CommonArgs),
    /// Run both estimators on shared wind and compare 1P tracking.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the wind noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scale one gain by a percentage, e.g. `k_p:5`. Repeatable.
    #[arg(long = "perturb-gain", value_name = "NAME:PCT", value_parser = parse_perturbation)]
    perturb_gain: Vec<(GainName, f64)>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            perturbations: self.perturb_gain.clone(),
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(commands::default_out)
    }
}

fn execute(command: &Command) -> Result<bool, CliError> {
    match command {
        Command::Simulate(a) => {
            let r = config::load(&a.config, &a.overrides())?;
            commands::simulate(&r, &a.out_dir())?;
            Ok(true)
        }
        Command::Bode(a) => {
            let r = config::load(&a.config, &a.overrides())?;
            commands::bode(&r, &a.out_dir())?;
            Ok(true)
        }
        Command::Verify(a) => {
            let r = config::load(&a.config, &a.overrides())?;
            let verdict = commands::verify(&r, a.out.as_deref())?;
            let json = serde_json::to_string_pretty(&verdict)
                .map_err(|e| CliError::Output(e.to_string()))?;
            println!("{json}");
            Ok(verdict.pass)
        }
        Command::Compare(a) => {
            let r = config::load(&a.config, &a.overrides())?;
            Ok(commands::compare(&r, &a.out_dir())?.pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BEWS_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
