//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 numeric failure, 3 I/O failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, ErrorClass};
use crate::presets::Preset;
pub use config::{InputFile, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "headwise", version, about = "Modality-aware attention head identification, rescaling and attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Boundaries, thresholds and gains of a published model row.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Model file written by `generate`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct WithInput {
    #[command(flatten)]
    base: WithModel,
    /// Token file: a `vision START END` line and token ids.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a (planted) model and its manifest.
    Generate(Common),
    /// Print a model file summary.
    Inspect(WithModel),
    /// Classify heads on one input.
    Classify(WithInput),
    /// Run inference, optionally with class-conditioned rescaling.
    Infer {
        #[command(flatten)]
        args: WithInput,
        #[arg(long, value_enum, default_value = "on")]
        rescale: Switch,
        /// Also dump the attention trace.
        #[arg(long)]
        trace: bool,
    },
    /// Gate-gradient contribution map for one next-token prediction.
    Attribute {
        #[command(flatten)]
        args: WithInput,
        /// 0-based position whose prediction is explained; defaults to the last.
        #[arg(long)]
        position: Option<usize>,
        /// Target token; defaults to the model's prediction at the position.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Time vanilla against gated+ratio inference.
    Bench(WithModel),
    /// Grid sweep on planted models.
    Sweep(Common),
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Validation => 1,
        ErrorClass::Numeric => 2,
        ErrorClass::Io => 3,
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
