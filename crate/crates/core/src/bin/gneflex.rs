use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gneflex_core::runner::{self, RunOptions, EXIT_ERROR};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Run the distributed iteration.
    Run,
    /// Solve centrally and write the equilibrium certificate.
    Oracle,
    /// Print cocoercivity constants and step sizes.
    Tune,
    /// Run both solvers and report their agreement.
    Compare,
}

/// Distributed equilibrium seeking for demand-response bidding.
#[derive(Debug, Parser)]
#[command(name = "gneflex", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `outputs.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for a random initial state (overrides `solver.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Stop once the step falls to this value (overrides `solver.tol`).
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap (overrides `solver.max_iter`).
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Accept explicit gains that fail the preconditioner check.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let opts = RunOptions {
        out: cli.out,
        seed: cli.seed,
        tol: cli.tol,
        max_iter: cli.max_iter,
        force: cli.force,
    };
    let name = match cli.command {
        Command::Run => "run",
        Command::Oracle => "oracle",
        Command::Tune => "tune",
        Command::Compare => "compare",
    };
    match runner::dispatch(name, &cli.config, &opts) {
        Ok(report) => {
            println!("{}", report.message.trim_end());
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
