use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use duc_cli::{execute, init_threads, Command, Overrides};

#[derive(Parser)]
#[command(name = "duc", version, about = "Rank data sources by data usefulness and plan sample allocation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rank candidate sources from covariate data or summaries.
    Rank(Common),
    /// Draw one realization of a synthetic shifted task.
    Simulate(Common),
    /// Compare the coefficient with realised excess-risk reductions.
    Validate(Common),
    /// Allocate a fixed total sample size across sources.
    PlanSize(Common),
    /// Split a budget between target and source observations.
    PlanBudget(Common),
    /// KL and domain-classifier scores for each source.
    Baselines(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Report path; tables and auxiliary files are written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Cmd::Rank(c) => (Command::Rank, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Validate(c) => (Command::Validate, c),
        Cmd::PlanSize(c) => (Command::PlanSize, c),
        Cmd::PlanBudget(c) => (Command::PlanBudget, c),
        Cmd::Baselines(c) => (Command::Baselines, c),
    };
    let overrides = Overrides { seed: c.seed, trials: c.trials, alpha: c.alpha, out: c.out };
    match init_threads().and_then(|_| execute(command, &c.config, &overrides)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
