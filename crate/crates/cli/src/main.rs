use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim_cli::{cmd_inspect_partition, cmd_pretrain, cmd_run};

/// Deterministic federated learning simulator.
#[derive(Debug, Parser)]
#[command(name = "fedsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory to create; must not exist.
        #[arg(long)]
        out: PathBuf,
        /// Agents trained concurrently. Results do not depend on it.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train centrally and write an FLPV parameter file.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write each agent's label histogram as JSON lines.
    InspectPartition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDSIM_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => cmd_run(config, out, *threads, *seed),
        Command::Pretrain { config, out, seed } => cmd_pretrain(config, out, *seed),
        Command::InspectPartition { config, out, seed } => {
            cmd_inspect_partition(config, out, *seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
