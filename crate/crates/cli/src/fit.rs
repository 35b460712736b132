use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use wmscore::io::{read_mask_png, read_training_file, FitOutput};
use wmscore::{fit_params, Error, ScoredExample};

use crate::config::{CommonArgs, PipelineConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON-lines training file; mask paths are relative to its directory
    #[arg(long)]
    pub training: PathBuf,
    /// Fit JSON output path (stdout if omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Exit with code 3 when the refinement does not converge
    #[arg(long)]
    pub strict: bool,
}

pub fn run(common: &CommonArgs, args: &FitArgs) -> CliResult<()> {
    let cfg = PipelineConfig::resolve(common, None)?;
    let records = read_training_file(&args.training).map_err(CliError::input)?;
    let base = args.training.parent().unwrap_or(Path::new("."));
    let data = records
        .par_iter()
        .map(|r| {
            let mask = read_mask_png(&r.resolve_mask(base))?;
            ScoredExample::new(mask, r.score()?)
        })
        .collect::<wmscore::Result<Vec<_>>>()
        .map_err(CliError::input)?;

    let result = fit_params(&data, &cfg.fit).map_err(|e| match e {
        Error::InvalidParameter(_) => CliError::config(e),
        other => CliError::input(other),
    })?;
    let out = FitOutput::from(&result);
    let mut text = serde_json::to_string_pretty(&out).map_err(CliError::input)?;
    text.push('\n');
    crate::emit(args.output.as_deref(), &text)?;
    eprintln!(
        "fit: lambda={} sigma={} alpha={} mse={:.6e} converged={} ({} evaluations)",
        out.lambda, out.sigma, out.alpha, out.mse, out.converged, result.evaluations
    );
    if args.strict && !result.converged {
        return Err(CliError::Numerical("fit did not converge within its budget".into()));
    }
    Ok(())
}
