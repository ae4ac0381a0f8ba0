//! Command-line front end: run configuration, checkpoints, metrics logs and
//! the `train`, `eval`, `verify` and `plot` commands.

pub mod checkpoint;
mod commands;
pub mod config;
pub mod metrics;
mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    apply_overrides, eval, eval_checkpoint, train, verify, EvalOptions, TrainOutcome, VerifyDocument,
    DEFAULT_EVAL_SEED, FINAL_EVAL_FILE, METRICS_FILE,
};
pub use config::RunConfig;
pub use plot::{plot, PlotOutput};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "dgppo", version, about = "Safe multi-agent policy learning with graph control barrier functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a TOML run configuration, resuming if checkpoints exist.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `run.output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this many completed updates without finishing the run.
        #[arg(long, hide = true)]
        stop_after: Option<u64>,
    },
    /// Evaluate the deterministic policy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 32)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
        seed: u64,
        /// Evaluate with a different number of agents than trained with.
        #[arg(long)]
        n_agents: Option<usize>,
        /// Write one JSON-lines trajectory per episode into this directory.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Run the oracle suite and print a JSON report.
    Verify,
    /// Turn metrics files into CSV tables and SVG charts.
    Plot {
        #[arg(required = true, num_args = 1..)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            seed,
            out,
            stop_after,
        } => {
            let cfg = apply_overrides(RunConfig::load(&config)?, seed, out);
            let outcome = train(&cfg, stop_after)?;
            if let Some(step) = outcome.resumed_from {
                eprintln!("resumed from update {step}");
            }
            match outcome.final_eval {
                Some(s) => println!("{}", serde_json::to_string_pretty(&s)?),
                None => eprintln!("stopped at update {}", outcome.step),
            }
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            n_agents,
            trajectories,
        } => {
            if episodes == 0 {
                return Err(Error::Invalid("--episodes must be positive".into()));
            }
            let opts = EvalOptions {
                episodes,
                seed,
                n_agents,
                trajectories,
            };
            println!("{}", serde_json::to_string_pretty(&eval(&checkpoint, &opts)?)?);
            Ok(0)
        }
        Command::Verify => {
            let report = verify()?;
            let doc = VerifyDocument {
                first_failure: report.first_failure().map(|r| r.name),
                report: &report,
            };
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Plot { files, out } => {
            let o = plot(&files, &out)?;
            if o.skipped_lines > 0 {
                eprintln!("warning: skipped {} malformed metrics lines", o.skipped_lines);
            }
            println!("wrote {} run tables, {}", o.run_csvs.len(), o.aggregate_csv.display());
            Ok(0)
        }
    }
}
