use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pia_core::cli::{list_problems, run, Overrides};
use pia_core::problems::Registry;

/// Entropy-regularized policy iteration experiments.
#[derive(Parser)]
#[command(name = "pia", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file.
    Run {
        config: PathBuf,
        #[arg(long, env = "PIA_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
        /// Seed for Monte-Carlo experiments.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = one per core).
        #[arg(long, env = "PIA_WORKERS")]
        workers: Option<usize>,
    },
    /// List registered problems with their assumption audit.
    ListProblems,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Args::parse().command {
        Command::ListProblems => {
            if let Err(e) = list_problems(&Registry::with_defaults(), &mut std::io::stdout().lock()) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, output_dir, seed, workers } => {
            match run(&config, &Overrides { output_dir, seed, workers }) {
                Ok(report) => {
                    for c in &report.checks {
                        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                    }
                    for c in report.failed_checks() {
                        eprintln!("check failed: {}", c.name);
                    }
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
