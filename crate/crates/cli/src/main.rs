mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{RunConfig, UsageError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "yieldnet", version, about = "Two-crop yield prediction from histogram cubes")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Config override, e.g. `--set train.iterations=200` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic raw dataset.
    Synth,
    /// Fit histogram bin edges on the training years.
    FitBins,
    /// Convert rasters and masks into histogram cubes.
    Ingest,
    /// Train the configured model.
    Train,
    /// Evaluate at each cutoff and write CSV and SVG reports.
    Evaluate,
    /// Train the joint model and both single-head variants and compare.
    Ablate,
    /// Print trainable parameter counts.
    Params,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(config::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set, cli.seed)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::FitBins => commands::fit_bins(&cfg),
        Command::Ingest => commands::ingest(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Ablate => commands::ablate(&cfg),
        Command::Params => commands::params(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
