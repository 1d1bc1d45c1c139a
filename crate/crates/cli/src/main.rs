use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod generate;
mod output;

/// Post-estimation smoothing of precomputed predictions.
#[derive(Debug, Parser)]
#[command(name = "pes", version, args_override_self = true)]
pub struct Cli {
    /// Seed for every random draw the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with global keys and one object per subcommand; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smooth the prediction columns of a CSV.
    Smooth(commands::SmoothArgs),
    /// Pick sigma and c on the validation rows and score the holdout rows.
    Tune(commands::TuneArgs),
    /// Run an Example 1 simulation sweep.
    Simulate(commands::SimulateArgs),
    /// Estimate gamma, beta, c* and the improvement bound.
    Theory(commands::TheoryArgs),
    /// Tune and fit a base predictor, writing holdout predictions.
    Baseline(commands::BaselineArgs),
    /// Write a synthetic dataset.
    Generate(generate::GenerateArgs),
}

/// Options shared by commands that read prediction tables.
#[derive(Debug, Clone, Args)]
pub struct ColumnArgs {
    /// JSON object remapping column names, e.g. {"index_prefix": "time"}.
    #[arg(long)]
    pub columns: Option<String>,
}

impl ColumnArgs {
    pub fn names(&self) -> anyhow::Result<pes_core::io::ColumnNames> {
        match &self.columns {
            None => Ok(Default::default()),
            Some(s) => Ok(serde_json::from_str(s).map_err(|e| anyhow::anyhow!("--columns: {e}"))?),
        }
    }
}

fn run() -> anyhow::Result<()> {
    let argv = config::expand_args(std::env::args_os().collect())?;
    let cli = Cli::parse_from(argv);
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| anyhow::anyhow!("--threads: {e}"))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Smooth(a) => commands::smooth(&a),
        Command::Tune(a) => commands::tune(&a),
        Command::Simulate(a) => commands::simulate(&a, seed),
        Command::Theory(a) => commands::theory(&a),
        Command::Baseline(a) => commands::baseline(&a, seed.unwrap_or(0)),
        Command::Generate(a) => generate::generate(&a, seed.unwrap_or(0)),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
