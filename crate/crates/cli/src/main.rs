//! `dsdr`: train the desk-scale diversity-regularized policy, run the
//! analytical check suite, or score a rollout group through the shaping
//! pipeline.
//!
//! All randomness is seeded and all artifacts are plain text, so every
//! command is reproducible byte for byte given the same arguments. Errors
//! leave a single `error: <class>: <message>` line on stderr and a nonzero
//! exit status.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod checkpoint;
mod cmd_check;
mod cmd_score;
mod cmd_train;
mod config;
mod errors;
mod metrics;

#[derive(Parser)]
#[command(
    name = "dsdr",
    version,
    about = "Diversity-regularized group-relative policy training at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training job and write manifest, metrics, and checkpoint.
    Train {
        /// Config file; defaults plus the built-in demo task when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one [train] key, e.g. --set method=grpo. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Override the seed after config and --set are applied.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory ($DSDR_OUT overrides this; default ./dsdr-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the analytical checks; one JSON line each, exit 0 iff all pass.
    Check {
        /// Substring filter on check names.
        #[arg(long)]
        filter: Option<String>,
        /// Base seed for the checks' random instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately miscompute the coupling softmax normalizer; the
        /// first check must then fail (self-test of the suite).
        #[arg(long)]
        perturb_softmax_normalizer: bool,
    },
    /// Score one group of {"text", "reward"} JSONL records.
    Score {
        /// Input file, one JSON object per line.
        input: PathBuf,
        /// Config file supplying shaping constants.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one [train] key, e.g. --set tau=2. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, set, seed, out } => {
            cmd_train::run(cmd_train::TrainArgs { config, sets: set, seed, out })
        }
        Command::Check { filter, seed, perturb_softmax_normalizer } => {
            cmd_check::run(cmd_check::CheckArgs { filter, seed, perturb_softmax_normalizer })
        }
        Command::Score { input, config, set } => {
            cmd_score::run(cmd_score::ScoreArgs { input, config, sets: set })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
