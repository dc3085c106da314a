use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dsparsa::harness::{parse_config, run_experiment, ExperimentConfig, FULL_REALIZATIONS};

#[derive(Parser)]
#[command(name = "dsparsa", version, about = "Run distributed sparse-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trace CSVs.
    Run(RunArgs),
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; realization r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "full_scale")]
    realizations: Option<usize>,
    /// Average over 100 realizations.
    #[arg(long)]
    full_scale: bool,
}

fn describe(config: &ExperimentConfig) -> String {
    let algos: Vec<&str> = config.algorithms.iter().map(|s| s.algorithm.as_str()).collect();
    format!(
        "{} with {} agents (out-degree {}), {} rounds x {} realizations, seed {}, algorithms [{}]",
        config.experiment_name(),
        config.agents,
        config.out_degree,
        config.rounds,
        config.realizations,
        config.seed,
        algos.join(", ")
    )
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = parse_config(&args.config)?;
    if let Some(out) = args.out {
        config.output = out;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.realizations {
        config.realizations = r;
    }
    if args.full_scale {
        config.realizations = FULL_REALIZATIONS;
    }
    config.validate()?;
    eprintln!("running {}", describe(&config));

    let outcome = run_experiment(&config)
        .with_context(|| format!("experiment from {} failed", args.config.display()))?;
    println!("{:<14} {:>8} {:>12} {:>12} {:>12}", "algorithm", "comm", "NMSE_dB", "J", "D");
    for result in &outcome.results {
        let last = result.mean.last().expect("traces hold the initial record");
        println!(
            "{:<14} {:>8} {:>12.3} {:>12.3e} {:>12.3e}",
            result.algorithm.as_str(),
            last.comm,
            last.nmse_db(),
            last.j,
            last.d
        );
        if result.inner_failures > 0 {
            eprintln!(
                "warning: {} inner solves of {} hit their iteration cap",
                result.inner_failures, result.algorithm
            );
        }
    }
    println!("wrote {} files to {}", outcome.files.len(), config.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config } => parse_config(&config).map_err(Into::into).map(|c| {
            println!("{}: ok ({})", config.display(), describe(&c));
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
