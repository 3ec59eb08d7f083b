//! `magail`: experts, demonstrations, imitation, evaluation and theory
//! checks, driven by JSON experiment configs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

#[derive(Parser)]
#[command(name = "magail", version, about = "Tabular multi-agent imitation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve or train the expert policy.
    MakeExpert {
        #[command(flatten)]
        common: Common,
    },
    /// Roll out an expert policy file into a demonstration file.
    CollectDemos {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        expert: PathBuf,
    },
    /// Imitate demonstrations with the configured method.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        demos: PathBuf,
        /// Expert policies for zero-sum side pairing.
        #[arg(long)]
        expert: Option<PathBuf>,
    },
    /// Monte-Carlo and exact returns of a policy file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Seeded sweeps over the exact solvers.
    VerifyTheory {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Largest number of instances per check family.
        #[arg(long, default_value_t = 100)]
        budget: usize,
        /// Injects a broken transition row into the validation check.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn load(common: &Common) -> Result<config::ExperimentConfig, Failure> {
    let mut cfg = config::load(&common.config).map_err(Failure::Usage)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> commands::Outcome {
    match cli.command {
        Command::MakeExpert { common } => commands::make_expert(&load(&common)?, &common.out),
        Command::CollectDemos { common, expert } => commands::collect_demos(&load(&common)?, &expert, &common.out),
        Command::Train { common, demos, expert } => {
            commands::train(&load(&common)?, &demos, expert.as_deref(), &common.out)
        }
        Command::Evaluate { common, policy } => commands::evaluate(&load(&common)?, &policy, &common.out),
        Command::VerifyTheory {
            config,
            out,
            seed,
            budget,
            corrupt,
        } => {
            let base = match config {
                Some(path) => config::load(&path).map_err(Failure::Usage)?.seed,
                None => 0,
            };
            commands::verify_theory(seed.unwrap_or(base), budget, corrupt, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code())
        }
    }
}
