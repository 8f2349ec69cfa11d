use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use persearch::commands::{self, Context};
use persearch::{CliError, Config};

/// Synthetic person search with memory-queue metric learning.
///
/// Exit codes: 0 success, 2 config/usage, 3 I/O, 4 file format, 5 training
/// aborted, 6 evaluation failed, 7 ablation cells failed.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults are used for anything it omits.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.momentum=0.9`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; beats PERSEARCH_OUT_DIR and the config's `out_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory written by `gen-data`; defaults to `<out>/dataset`,
    /// else the dataset is generated in memory from the config.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `<out>/dataset`.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train, write `checkpoint.json` and `run_record.json`, then evaluate.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Skip the gallery sweep after training.
        #[arg(long)]
        skip_eval: bool,
    },
    /// Evaluate a checkpoint over the configured gallery sizes into `eval.csv`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Checkpoint to evaluate; defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every cell of the `[ablation]` grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Summarize run records into markdown and CSV tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run files or directories to scan; defaults to the output directory.
        inputs: Vec<PathBuf>,
    },
}

fn context(common: &Common) -> Result<Context, CliError> {
    let config = Config::load(common.config.as_deref(), &common.overrides)?;
    Context::new(config, common.out.as_deref())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common } => {
            commands::gen_data(&context(&common)?)?;
        }
        Command::Train {
            common,
            data,
            skip_eval,
        } => {
            let ctx = context(&common)?;
            commands::train(&ctx, data.data.as_deref(), skip_eval)?;
            eprintln!("outputs in {}", ctx.out_dir.display());
        }
        Command::Eval {
            common,
            data,
            checkpoint,
        } => {
            commands::eval(
                &context(&common)?,
                checkpoint.as_deref(),
                data.data.as_deref(),
            )?;
        }
        Command::Ablate { common, data } => {
            let summary = commands::ablate(&context(&common)?, data.data.as_deref())?;
            print!("{}", summary.to_markdown());
        }
        Command::Report { common, inputs } => {
            let summary = commands::report(&context(&common)?, &inputs)?;
            print!("{}", summary.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
