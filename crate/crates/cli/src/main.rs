//! `gplv`: batch runs of local volatility calibration, prediction, model
//! comparison, sequential calibration, pricing and the volatility index.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

mod calibrate;
mod config;
mod data;
mod evidence;
mod failure;
mod predict;
mod price;
mod sequential;
mod vix;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use failure::Failure;

#[derive(Parser)]
#[command(name = "gplv", version, about = "Bayesian local volatility calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior of one snapshot and write the states and summaries.
    Calibrate(Common),
    /// Predict local volatility, prices and implied vols at new points.
    Predict(Common),
    /// Laplace evidence of one or more posteriors.
    Evidence(Common),
    /// Calibrate a series of snapshots with a time-augmented kernel.
    Sequential(Common),
    /// Volatility index from quotes or predicted prices.
    Vix(Common),
    /// Price a local volatility surface with the forward solver.
    Price(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent chains.
    #[arg(long)]
    chains: Option<usize>,
    /// Validate configuration and data without sampling.
    #[arg(long)]
    dry_run: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn execute(command: Command) -> Result<(), Failure> {
    let (common, run): (Common, fn(&RunConfig, bool) -> Result<(), Failure>) = match command {
        Command::Calibrate(c) => (c, calibrate::run),
        Command::Predict(c) => (c, predict::run),
        Command::Evidence(c) => (c, evidence::run),
        Command::Sequential(c) => (c, sequential::run),
        Command::Vix(c) => (c, vix::run),
        Command::Price(c) => (c, price::run),
    };
    let level = match common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if common.chains == Some(0) {
        return Err(Failure::Usage("--chains must be at least 1".into()));
    }
    let cfg = RunConfig::load(&common.config)?.with_overrides(common.output, common.seed, common.chains);
    run(&cfg, common.dry_run)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gplv: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
