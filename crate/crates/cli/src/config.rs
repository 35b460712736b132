//! Pipeline configuration: defaults, then a TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use wmscore::{FitConfig, ScoringParams, DEFAULT_IMAGE_COUNT_FRACTION, DEFAULT_LIKELIHOOD_THRESHOLD};

use crate::error::{CliError, CliResult};

pub const DEFAULT_LAMBDA: f64 = 78.0;
pub const DEFAULT_SIGMA: f64 = 0.44;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BETA: f64 = 0.1;

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub likelihood_threshold: Option<f64>,
    pub image_count_threshold: Option<f64>,
    pub params_file: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub fit: Option<FitConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Relative paths inside the config are relative to the config file.
        if let (Some(p), Some(dir)) = (&cfg.params_file, path.parent()) {
            if p.is_relative() {
                cfg.params_file = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Per-pixel likelihood threshold p
    #[arg(long, global = true)]
    pub likelihood_threshold: Option<f64>,
    /// Image-level pixel-count threshold, as a fraction of the image
    #[arg(long, global = true)]
    pub image_count_threshold: Option<f64>,
    /// Scoring parameters from a fit output JSON
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ParamsFile {
    lambda: f64,
    sigma: f64,
    alpha: f64,
}

pub fn read_params_file(path: &Path) -> CliResult<ScoringParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let p: ParamsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(ScoringParams {
        lambda: p.lambda,
        sigma: p.sigma,
        alpha: p.alpha,
    })
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub likelihood_threshold: f64,
    pub image_count_threshold: f64,
    pub params: ScoringParams,
    pub beta: f64,
    pub fit: FitConfig,
}

impl PipelineConfig {
    /// Resolves settings with precedence flags > config file > `base_params`
    /// (when given) > defaults. `base_params` sits between the config file
    /// and the flags.
    pub fn resolve(args: &CommonArgs, base_params: Option<ScoringParams>) -> CliResult<Self> {
        let file = match &args.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let mut params = ScoringParams {
            lambda: DEFAULT_LAMBDA,
            sigma: DEFAULT_SIGMA,
            alpha: DEFAULT_ALPHA,
        };
        if let Some(p) = &file.params_file {
            params = read_params_file(p)?;
        }
        override_params(&mut params, file.lambda, file.sigma, file.alpha);
        if let Some(p) = base_params {
            params = p;
        }
        if let Some(p) = &args.params {
            params = read_params_file(p)?;
        }
        override_params(&mut params, args.lambda, args.sigma, args.alpha);
        params.validate().map_err(CliError::config)?;

        let cfg = Self {
            likelihood_threshold: args
                .likelihood_threshold
                .or(file.likelihood_threshold)
                .unwrap_or(DEFAULT_LIKELIHOOD_THRESHOLD),
            image_count_threshold: args
                .image_count_threshold
                .or(file.image_count_threshold)
                .unwrap_or(DEFAULT_IMAGE_COUNT_FRACTION),
            params,
            beta: file.beta.unwrap_or(DEFAULT_BETA),
            fit: file.fit.unwrap_or_default(),
        };
        if !(0.0..=1.0).contains(&cfg.likelihood_threshold) {
            return Err(CliError::Config(format!(
                "likelihood threshold {} is outside [0, 1]",
                cfg.likelihood_threshold
            )));
        }
        if !(0.0..=1.0).contains(&cfg.image_count_threshold) {
            return Err(CliError::Config(format!(
                "image count threshold {} is outside [0, 1]",
                cfg.image_count_threshold
            )));
        }
        Ok(cfg)
    }
}

fn override_params(params: &mut ScoringParams, lambda: Option<f64>, sigma: Option<f64>, alpha: Option<f64>) {
    if let Some(v) = lambda {
        params.lambda = v;
    }
    if let Some(v) = sigma {
        params.sigma = v;
    }
    if let Some(v) = alpha {
        params.alpha = v;
    }
}
