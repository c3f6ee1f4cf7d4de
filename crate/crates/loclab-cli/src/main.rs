use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use loclab_cli::runner::{run, RunOverrides};
use loclab_cli::spec::validate;
use loclab_cli::{plot, CliError};

#[derive(Parser)]
#[command(
    name = "loclab",
    about = "Run, validate, and plot declarative experiments over random Schrodinger boxes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a spec: all grid cells times realizations, with resume.
    Run {
        spec: PathBuf,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Task budget override (cells x realizations must fit).
        #[arg(long)]
        budget: Option<u64>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a spec and print derived scales without executing.
    Validate {
        spec: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Render an SVG from a results directory.
    Plot {
        dir: PathBuf,
        /// One of: decay, probability, moments, stability.
        kind: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            spec,
            workers,
            seed,
            budget,
            out,
        } => {
            let overrides = RunOverrides {
                workers: Some(workers),
                seed,
                budget,
                out,
            };
            match run(&spec, &overrides) {
                Ok(outcome) => {
                    println!("{}", outcome.render());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { spec, budget } => {
            let report = validate(&spec, budget);
            print!("{}", report.render());
            ExitCode::SUCCESS
        }
        Command::Plot { dir, kind } => match plot::plot(&dir, &kind) {
            Ok(path) => {
                println!("{}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(e.exit_code())
}
