use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use jamsim::cli::{configure_workers, run_experiment, Mode, Overrides, WORKERS_ENV};

/// Simulate and analyze networked control loops under jamming and disturbance.
#[derive(Debug, Parser)]
#[command(name = "jamsim", version, after_help = format!("Worker threads: set {WORKERS_ENV}=<n>."))]
struct Args {
    /// What to run.
    #[arg(value_enum)]
    mode: Mode,
    /// Experiment description (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; overrides `output_dir` in the experiment file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo runs; overrides `run.runs`.
    #[arg(long)]
    runs: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides { out: args.out, seed: args.seed, runs: args.runs };
    let result = configure_workers().and_then(|()| run_experiment(args.mode, &args.spec, &overrides));
    match result {
        Ok(outcome) => {
            print!("{}", outcome.report);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("jamsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
