//! `aeronav`: config-driven training and evaluation for the privileged-critic
//! UAV navigation stack. Exit codes: 0 success, 1 runtime failure, 2
//! configuration/usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "aeronav", version, about = "UAV navigation: privileged TD3 on a deterministic micro-simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write metrics, checkpoint, and report.
    Train {
        /// Sectioned key=value config file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Repeatable config override.
        #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a checkpoint on a freshly seeded environment and write metrics
    /// plus one trajectory file per episode.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Episodes to fly.
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        /// Environment seed; fixes the field and goal sequence.
        #[arg(long, default_value_t = 999)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Generate an obstacle field and write its plain-text form.
    GenEnv {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render the observation-corruption ladder stage by stage (PGM images
    /// plus measured statistics).
    InspectNoise {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Summarize a finished run directory into plot-ready tables.
    Report {
        /// Run directory containing report.json.
        #[arg(long)]
        run: PathBuf,
        /// Table output directory (defaults to the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train { config, out, overrides } => {
            commands::cmd_train(config.as_deref(), out, overrides)
        }
        Cmd::Eval { checkpoint, config, episodes, seed, out, overrides } => {
            commands::cmd_eval(checkpoint, config.as_deref(), *episodes, *seed, out, overrides)
        }
        Cmd::GenEnv { seed, config, out, overrides } => {
            commands::cmd_gen_env(*seed, config.as_deref(), out, overrides)
        }
        Cmd::InspectNoise { config, seed, out, overrides } => {
            commands::cmd_inspect_noise(config.as_deref(), *seed, out, overrides)
        }
        Cmd::Report { run, out } => commands::cmd_report(run, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
