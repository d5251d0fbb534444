mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::Config;

/// Error classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configs or input files.
    #[error("{0}")]
    Input(String),
    /// A model, solver or simulation failure.
    #[error("{0}")]
    Compute(String),
    /// Results could not be written.
    #[error("{0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Compute(_) => 3,
            CliError::Output(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hpwh", version, about = "Heat-pump water heater modelling, forecasting and predictive control")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Seed for draw generation, synthetic prices and model training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grid-search the control model parameters on measured data.
    Tune(commands::TuneArgs),
    /// Score forecast models on a train/test split of a draw history.
    Backtest(commands::BacktestArgs),
    /// Run one closed-loop scenario.
    Run(commands::RunArgs),
    /// Run several modes on identical draws and compare them.
    Compare(commands::CompareArgs),
    /// Write a synthetic draw schedule as CSV.
    GenDraws(commands::GenDrawsArgs),
    /// Print the effective configuration.
    Config,
}

fn load_config(global: &Global) -> Result<Config, CliError> {
    let mut cfg = match &global.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = load_config(&cli.global).and_then(|cfg| match cli.command {
        Command::Tune(a) => commands::tune(&cfg, &cli.global, &a),
        Command::Backtest(a) => commands::backtest(&cfg, &cli.global, &a),
        Command::Run(a) => commands::run(cfg, &cli.global, &a),
        Command::Compare(a) => commands::compare(cfg, &cli.global, &a),
        Command::GenDraws(a) => commands::gen_draws(&cfg, &cli.global, &a),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
