mod config;
mod contour;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Resolved;
use crate::error::CliError;
use crate::run::{Command, Options, Run};

/// Pursuit-evasion games solved by splitting the target into one-pursuer games.
#[derive(Parser, Debug)]
#[command(name = "pe-decomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Config file, or the name of a bundled config (example1, test1, test2).
    #[arg(long, global = true)]
    config: Option<String>,

    /// Output directory; overrides output.dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Largest grid, in nodes, any single solve may use. Accepts 2e7 style.
    #[arg(long, global = true, default_value = "2e7", value_parser = parse_budget)]
    budget: u128,

    /// Seed for the sampled checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Check the pursuer-advantage condition and whether the game splits.
    Check,
    /// Solve the full game directly on one grid.
    Solve,
    /// Solve every one-pursuer game and build the lower envelope.
    Decompose,
    /// Play the feedback strategies from each configured start.
    Simulate,
    /// Write level-set polylines of the envelope on a 2D slice.
    Levelsets,
}

fn parse_budget(s: &str) -> Result<u128, String> {
    if let Ok(n) = s.parse::<u128>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v.fract() == 0.0 => Ok(v as u128),
        _ => Err(format!("not a node count: {s}")),
    }
}

fn prepare(cli: &Cli) -> Result<Run, CliError> {
    let Some(arg) = &cli.config else {
        return Err(CliError::Config("--config is required".into()));
    };
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let resolved = Resolved::new(config::load(arg)?)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&resolved.config.output.dir));
    let command = match cli.command {
        Cmd::Check => Command::Check,
        Cmd::Solve => Command::Solve,
        Cmd::Decompose => Command::Decompose,
        Cmd::Simulate => Command::Simulate,
        Cmd::Levelsets => Command::Levelsets,
    };
    Ok(Run::new(
        command,
        resolved,
        Options {
            out,
            budget: cli.budget,
            seed: cli.seed,
            threads: cli.threads,
        },
    ))
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.record());
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut run = match prepare(&cli) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let result = run.execute();
    let written = run.finish(result.as_ref().err());
    match (result, written) {
        (Err(e), _) | (Ok(()), Err(e)) => fail(&e),
        (Ok(()), Ok(())) => ExitCode::SUCCESS,
    }
}
