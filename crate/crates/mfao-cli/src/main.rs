use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use mfao_cli::{commands, ExperimentConfig, Run, Status};

#[derive(Parser)]
#[command(name = "mfao", version, about = "Multi-frequency acousto-optic transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the Neumann series tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and validate the phantom.
    Phantom,
    /// Forward-solve and emit g-paired boundary measurements.
    Simulate,
    /// Recover H from measurements and compare with the oracle.
    Functional {
        /// Measurement table; defaults to `<out>/measurements.csv`.
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Reconstruct sigma and k.
    Reconstruct,
    /// Run the invariant suite.
    Verify,
}

fn run(cli: Cli) -> Result<Status> {
    let Some(path) = cli.config else {
        anyhow::bail!("--config is required");
    };
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.tol {
        anyhow::ensure!(t > 0.0, "--tol must be positive");
        cfg.solver.tol = t;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let run = Run::new(cfg, out)?;
    match cli.command {
        Command::Phantom => commands::phantom(&run),
        Command::Simulate => commands::simulate(&run),
        Command::Functional { measurements } => commands::functional(&run, measurements.as_deref()),
        Command::Reconstruct => commands::reconstruct(&run),
        Command::Verify => commands::verify(&run),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Passed) => ExitCode::SUCCESS,
        Ok(Status::InvariantFailure) => {
            eprintln!("invariant failure; see the output directory");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
