use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use datacert_cli::{
    init_threads, run, sample_count, validate, JobConfig, RunOptions, ValidateOptions, EXIT_ERROR,
};
use datacert_core::pipeline::JobKind;

/// Data-driven barrier certificates for black-box stochastic systems.
#[derive(Parser)]
#[command(name = "datacert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the required sample counts without sampling.
    SampleCount {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verify an autonomous system.
    Verify(RunArgs),
    /// Synthesize a polynomial controller with its barrier.
    Synthesize(RunArgs),
    /// Verify with the contraction condition over a grid of factors.
    VerifyKappa(RunArgs),
    /// Check a stored report by Monte Carlo simulation and grid evaluation.
    Validate {
        /// Report written by verify, synthesize or verify-kappa.
        report: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = ValidateOptions::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = ValidateOptions::default().trials)]
        trials: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the report and CSV files.
    #[arg(long, default_value = "datacert-out")]
    out: PathBuf,
    /// Dataset cache CSV; overrides `sampling.cache`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Use this many samples instead of the required count. Voids the guarantee when smaller.
    #[arg(long)]
    n_override: Option<u64>,
}

fn execute(cli: Cli) -> datacert_core::Result<i32> {
    init_threads()?;
    let mut stdout = std::io::stdout().lock();
    let run_with = |kind: JobKind, a: RunArgs, out: &mut dyn std::io::Write| {
        let cfg = JobConfig::load(&a.config)?;
        let opts = RunOptions {
            seed: a.seed,
            out: a.out,
            dataset: a.dataset,
            n_override: a.n_override,
        };
        run(kind, &cfg, &opts, out).map(|(code, _)| code)
    };
    match cli.command {
        Command::SampleCount { config } => sample_count(&JobConfig::load(&config)?, &mut stdout),
        Command::Verify(a) => run_with(JobKind::Verify, a, &mut stdout),
        Command::Synthesize(a) => run_with(JobKind::Synthesize, a, &mut stdout),
        Command::VerifyKappa(a) => run_with(JobKind::VerifyKappa, a, &mut stdout),
        Command::Validate {
            report,
            config,
            seed,
            trials,
        } => {
            let cfg = JobConfig::load(&config)?;
            validate(
                &report,
                &cfg,
                &ValidateOptions { trials, seed },
                &mut stdout,
            )
            .map(|(code, _)| code)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
