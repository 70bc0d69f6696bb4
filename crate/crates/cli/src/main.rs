//! boxdiff: drives the lab end to end. `build` constructs a composite and
//! writes its function and witness catalog; `certify` re-derives every
//! certified average into tables; `verify` rechecks a run directory bit for
//! bit; `regress` and `classify` run the staged experiments; `bench` times
//! the cell index against a linear scan.
//!
//! Every command reads a flat key=value config (flags shadow it), derives
//! all randomness from one master seed, and writes a manifest that is
//! itself a config reproducing the run.

mod bench;
mod build;
mod certify;
mod classify;
mod config;
mod manifest;
mod regress;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CliError, Config};

#[derive(Parser)]
#[command(name = "boxdiff", version, about = "Box-differentiation lab driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a composite; write fn.boxfn, catalog.boxcat, and a manifest.
    Build(Common),
    /// Re-derive every certified average; write certificate.csv and summary.txt.
    Certify(Common),
    /// Run the staged regression schedule; write trajectory.csv.
    Regress(Common),
    /// Run the staged two-class experiment; write separation.csv.
    Classify(Common),
    /// Time indexed against linear-scan integration; write bench.csv.
    Bench(Common),
    /// Recheck artifacts bit for bit; exit 3 on any drift.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key=value parameter file; a manifest from an earlier run works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; every stream the command uses derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for artifacts and tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Certification grid resolution.
    #[arg(long)]
    grid: Option<u32>,
    /// Worker threads; only certificate re-derivation fans out today.
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Build(_) => "build",
            Command::Certify(_) => "certify",
            Command::Regress(_) => "regress",
            Command::Classify(_) => "classify",
            Command::Bench(_) => "bench",
            Command::Verify(_) => "verify",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Build(c)
            | Command::Certify(c)
            | Command::Regress(c)
            | Command::Classify(c)
            | Command::Bench(c)
            | Command::Verify(c) => c,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::empty(),
    };
    cfg.expect_command(cli.command.name())?;
    if let Some(seed) = common.seed {
        cfg.set("seed", seed);
    }
    if let Some(out) = &common.out {
        cfg.set("out", out.display());
    }
    if let Some(grid) = common.grid {
        cfg.set("grid", grid);
    }
    if let Some(threads) = common.threads {
        cfg.set("threads", threads);
    }
    match cli.command {
        Command::Build(_) => build::run(&mut cfg),
        Command::Certify(_) => certify::run(&mut cfg),
        Command::Regress(_) => regress::run(&mut cfg),
        Command::Classify(_) => classify::run(&mut cfg),
        Command::Bench(_) => bench::run(&mut cfg),
        Command::Verify(_) => verify::run(&mut cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("boxdiff: {}", e);
            ExitCode::from(e.code())
        }
    }
}
