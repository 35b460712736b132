mod config;
mod error;
mod eval;
mod fit;
mod score;
mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::CommonArgs;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "wmscore", version, about = "Watermark distraction scoring")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score likelihood maps or masks; writes image_id,w,G,score CSV
    Score(score::ScoreArgs),
    /// Fit lambda, sigma and alpha to rated label maps
    Fit(fit::FitArgs),
    /// Evaluate predicted label maps against ground truth
    Eval(eval::EvalArgs),
    /// Generate a seeded synthetic dataset
    Synth(synth::SynthArgs),
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub(crate) fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Input(format!("stdout: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Score(args) => score::run(&cli.common, args),
        Command::Fit(args) => fit::run(&cli.common, args),
        Command::Eval(args) => eval::run(&cli.common, args),
        Command::Synth(args) => synth::run(&cli.common, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
