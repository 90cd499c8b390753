use std::path::PathBuf;
use std::process::ExitCode;

use ais_cli::{run_command, Command, ConfigArgs, RunConfig};
use ais_core::targets::DEFAULT_GRID;
use clap::{Parser, Subcommand};

/// Annealed importance sampling: log Z estimation and path optimization on
/// 2D targets.
#[derive(Parser)]
#[command(name = "ais", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Estimate log Z and write one diagnostics row to estimate.csv
    Estimate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trained parameters (.bin with a .json sidecar)
        #[arg(long)]
        params: Option<PathBuf>,
        /// Replace the CSV instead of appending
        #[arg(long)]
        overwrite: bool,
    },
    /// Train the path and step sizes; writes train.csv and a parameter file
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        overwrite: bool,
    },
    /// Print the quadrature log Z of the target
    Oracle {
        #[command(flatten)]
        config: ConfigArgs,
        /// Grid points per axis
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
    },
    /// Sweep M over 2..128 for vanilla and trained samplers; writes bench.csv
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        overwrite: bool,
    },
    /// Scatter plot of final particles colored by weight, as SVG
    Plot {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output file; defaults to a name inside the output directory
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List the built-in targets
    ListTargets,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, args, overwrite) = match cli.command {
        Sub::Estimate {
            config,
            params,
            overwrite,
        } => (Command::Estimate { params }, config, overwrite),
        Sub::Train { config, overwrite } => (Command::Train, config, overwrite),
        Sub::Oracle { config, grid } => (Command::Oracle { grid }, config, false),
        Sub::Bench { config, overwrite } => (Command::Bench, config, overwrite),
        Sub::Plot { config, params, output } => (Command::Plot { params, output }, config, false),
        Sub::ListTargets => (Command::ListTargets, ConfigArgs::default(), false),
    };
    let result = RunConfig::resolve(&args).and_then(|cfg| run_command(&cmd, &cfg, overwrite));
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
