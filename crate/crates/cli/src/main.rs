mod commands;
mod config;
mod error;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliResult;

/// Sparse and deep Gaussian process regression with robust losses and
/// alternative divergences.
#[derive(Debug, Parser)]
#[command(name = "dgp-gvi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// Replaces `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces `train.iterations`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory; otherwise the config value, then $DGP_GVI_OUTPUT_DIR, then ./dgp-gvi-out.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write checkpoint.json, trace.csv and metrics.json.
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train every configured method on `n_splits` seeded splits and tabulate test metrics.
    Benchmark {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare implemented gradients with finite differences on the reference model.
    Gradcheck {
        config: Option<PathBuf>,
        /// Adds 1 to the implemented gradient at this index (negative control).
        #[arg(long, hide = true)]
        corrupt_index: Option<usize>,
    },
    /// Predict with a saved checkpoint; inputs and outputs are in original units.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// The input CSV has no header row.
        #[arg(long)]
        no_header: bool,
        #[arg(long, default_value = "predictions.csv")]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Path, o: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = o.seed {
        cfg.train.seed = seed;
    }
    if let Some(it) = o.iterations {
        cfg.train.iterations = it;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            commands::train::run(&cfg, overrides.output_dir.as_deref())
        }
        Command::Benchmark { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            commands::benchmark::run(&cfg, overrides.output_dir.as_deref())
        }
        Command::Gradcheck { config, corrupt_index } => {
            let file = commands::gradcheck::GradcheckFile::load(config.as_deref())?;
            commands::gradcheck::run(&file, corrupt_index)
        }
        Command::Predict {
            checkpoint,
            input,
            no_header,
            output,
            samples,
            seed,
        } => commands::predict::run(&commands::predict::PredictArgs {
            checkpoint: &checkpoint,
            input: &input,
            has_header: !no_header,
            output: &output,
            samples,
            seed,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors count as configuration errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
