//! `coopdyn <subcommand> --config <file> [--out <dir>] [--seed <u64>]`

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coopdyn::batch;
use coopdyn::harness::{self, HarnessError, ModelKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "coopdyn",
    version,
    about = "Phenotype divergence and cooperation dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate the two-player reciprocity game from one start.
    Game(RunArgs),
    /// Iterate the game from many starts and record the limits.
    GameSweep(RunArgs),
    /// Iterate the mean-field n-player game.
    Nplayer(RunArgs),
    /// Simulate the phenotype-structured population.
    Pde3d(RunArgs),
    /// Simulate the two cooperation-structured populations.
    Coop(RunArgs),
    /// Print the regime (game) or fate (coop) report without simulating.
    Classify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized sweeps.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load(args: &RunArgs, kind: Option<ModelKind>) -> Result<RunConfig, HarnessError> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = harness::parse_config_as(&text, kind).map_err(HarnessError::Config)?;
    cfg.output_dir = args.out.clone();
    cfg.seed = args.seed;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    let (args, kind) = match &cli.command {
        Command::Game(a) => (a, Some(ModelKind::Game)),
        Command::GameSweep(a) => (a, Some(ModelKind::GameSweep)),
        Command::Nplayer(a) => (a, Some(ModelKind::NPlayer)),
        Command::Pde3d(a) => (a, Some(ModelKind::Pde3d)),
        Command::Coop(a) => (a, Some(ModelKind::Coop)),
        Command::Classify(a) => (a, None),
    };
    let cfg = load(args, kind)?;
    if kind.is_none() {
        let report = harness::classify_report(&cfg)?;
        print!("{report}");
        return Ok(());
    }
    let manifest =
        batch::with_thread_cap(harness::thread_cap_from_env(), || harness::dispatch(&cfg))?;
    for a in &manifest.artifacts {
        println!("{} {}", cfg.output_dir.join(&a.file).display(), a.rows);
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
