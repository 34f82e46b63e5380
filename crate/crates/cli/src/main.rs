use std::path::PathBuf;

use clap::{Parser, Subcommand};

use fedguard_cli::runner;
use fedguard_core::Error;

#[derive(Parser)]
#[command(
    name = "fedguard",
    version,
    about = "Federated averaging simulator with anomaly-score client banning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config, writing metrics.csv and summary.json
    Run {
        /// Path to a JSON experiment config
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master_seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output_dir
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences for a model
    Gradcheck {
        /// Model name: small_mlp or paper_cnn
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print each client's sample count and distinct-label count
    PartitionStats {
        /// Path to a JSON experiment config
        #[arg(long)]
        config: PathBuf,
    },
}

/// FEDGUARD_THREADS caps client-update parallelism; unset or 0 means
/// sequential. Either way the results are identical.
fn worker_threads() -> Result<usize, String> {
    match std::env::var("FEDGUARD_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(format!("FEDGUARD_THREADS: {e}")),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| format!("FEDGUARD_THREADS must be a non-negative integer, got {s:?}")),
    }
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::Protocol(_) | Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn report(result: fedguard_core::Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, seed, out } => match worker_threads() {
            Err(msg) => {
                eprintln!("error: {msg}");
                2
            }
            Ok(threads) => report(
                runner::load_config(&config, seed, out.as_deref())
                    .and_then(|cfg| runner::run_to_dir(&cfg, threads)),
            ),
        },
        Command::Gradcheck { spec, seed } => match runner::gradcheck(&spec, seed) {
            Ok(true) => 0,
            Ok(false) => {
                eprintln!(
                    "gradcheck failed: error exceeds {:.0e}",
                    runner::GRADCHECK_TOLERANCE
                );
                1
            }
            Err(e) => {
                eprintln!("error: {e}");
                error_code(&e)
            }
        },
        Command::PartitionStats { config } => report(
            runner::load_config(&config, None, None)
                .and_then(|cfg| runner::partition_stats(&cfg)),
        ),
    };
    std::process::exit(code);
}
