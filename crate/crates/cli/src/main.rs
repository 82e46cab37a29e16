use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedpop::harness::{self, ExperimentConfig, HarnessError, SweepGrid};

/// Federated population-based hyperparameter tuning experiments.
#[derive(Parser)]
#[command(name = "fedpop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write its reports.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds (overrides `seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run a scalability grid over N_c and/or R_c.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary table of a run or sweep directory.
    Report { dir: PathBuf },
}

fn load(path: &Path, out: Option<PathBuf>, seeds: Option<Vec<u64>>) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        config.output_dir = out;
    }
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out, seeds } => {
            let config = load(&config, out, seeds)?;
            let (report, dir) = harness::run_to_dir(&config)?;
            print!("{}", harness::print_report(&dir)?);
            log::info!("wrote {} seeds to {}", report.seeds.len(), dir.display());
        }
        Command::Sweep { config, grid, out } => {
            let config = load(&config, out, None)?;
            let grid = SweepGrid::load(&grid)?;
            harness::run_sweep(&config, &grid)?;
            print!("{}", harness::print_report(&config.output_dir)?);
        }
        Command::Report { dir } => print!("{}", harness::print_report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
