//! `speclab`: profile latency models, simulate serving runs, sweep one axis,
//! or compare the four ablation modes.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod output;
mod overrides;

use commands::Axis;

#[derive(Debug, Parser)]
#[command(name = "speclab", version, about = "Speculative-decoding serving lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `section.key=value`, applied after the config file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Profile the ground-truth stage latencies and fit the piecewise models.
    Profile {
        #[command(flatten)]
        common: Common,
    },
    /// Run one simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Fitted models (fits.json from `profile`) for the controllers.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Compare every output with plain autoregressive decoding.
        #[arg(long)]
        oracle_check: bool,
    },
    /// One simulation per value of an axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// VSD, VSD_AD, VSD_AD_EE and FULL on the same workload and seed.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn config_for(common: &Common) -> Result<speclab::simd::SimConfig> {
    let text = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
        None => None,
    };
    overrides::resolve(text.as_deref(), &common.set, common.seed)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile { common } => commands::profile(&config_for(&common)?, &common.out),
        Command::Simulate {
            common,
            params,
            oracle_check,
        } => {
            let mut config = config_for(&common)?;
            config.sim.oracle_check |= oracle_check;
            commands::simulate(&config, params.as_deref(), &common.out).map(|_| ())
        }
        Command::Sweep { common, axis, values } => {
            let values = if values.is_empty() { axis.default_values() } else { values };
            commands::sweep(&config_for(&common)?, axis, &values, &common.out)
        }
        Command::Ablate { common } => commands::ablate(&config_for(&common)?, &common.out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
