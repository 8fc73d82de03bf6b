use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wfb::cli::{
    build_workspace, cmd_constants, cmd_solve, cmd_sweep, cmd_verify, cmd_weights,
    load_config_file, EXIT_NO_CONVERGENCE, EXIT_VALIDATION,
};
use wfb::error::Error;

/// Solver and verification harness for weighted volume-constrained free
/// boundary problems on the unit ball.
#[derive(Parser)]
#[command(name = "wfb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampler seed (overrides `seed` from the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the penalized functional at the configured epsilon.
    Solve(Common),
    /// Run the epsilon continuation and flag the attainment threshold.
    Sweep(Common),
    /// Verify the structural properties of a dumped field.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Field dump to check (as written by `solve`).
        #[arg(long)]
        field: PathBuf,
    },
    /// Report A2/doubling/admissibility constants of the weight.
    Weights(Common),
    /// Assemble and re-check the decay-iteration constants.
    Constants(Common),
}

fn run() -> wfb::Result<i32> {
    let cli = Cli::parse();
    let (common, field): (&Common, Option<&PathBuf>) = match &cli.command {
        Command::Solve(c) | Command::Sweep(c) | Command::Weights(c) | Command::Constants(c) => {
            (c, None)
        }
        Command::Verify { common, field } => (common, Some(field)),
    };

    let mut config = load_config_file(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    let out_dir = config.output_dir.clone();
    let ws = build_workspace(config)?;

    match &cli.command {
        Command::Solve(_) => cmd_solve(&ws, &out_dir),
        Command::Sweep(_) => cmd_sweep(&ws, &out_dir),
        Command::Verify { .. } => cmd_verify(&ws, field.expect("clap guarantees"), &out_dir),
        Command::Weights(_) => cmd_weights(&ws, &out_dir),
        Command::Constants(_) => cmd_constants(&ws, &out_dir),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::InvalidParam { .. }
                | Error::InvalidWeight(_)
                | Error::InvalidGrid(_)
                | Error::InvalidBoundary(_)
                | Error::FieldMismatch(_)
                | Error::MalformedDump(_) => EXIT_VALIDATION,
                Error::SolveDiverged { .. } | Error::EigenDiverged(_) => EXIT_NO_CONVERGENCE,
                _ => 1,
            };
            ExitCode::from(code as u8)
        }
    }
}
