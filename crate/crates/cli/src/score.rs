use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use wmscore::io::{list_pngs, read_likelihood_png, read_mask_png, write_mask_png};
use wmscore::scoring::gaussian_weights;
use wmscore::{score_hybrid, threshold_likelihood, BinaryMask, WeightMap};

use crate::config::{CommonArgs, PipelineConfig};
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    /// 8-bit likelihood maps, thresholded at p
    Likelihood,
    /// {0, 255} masks used as the segmentation directly
    Mask,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Directory of <image_id>.png segmentation inputs
    #[arg(long)]
    pub input: PathBuf,
    /// Optional directory of classification-tower inputs with the same names
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputKind::Likelihood)]
    pub kind: InputKind,
    /// CSV output path (stdout if omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write each final label map as <image_id>.png here
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

pub const CSV_HEADER: &str = "image_id,w,G,score";

fn load(path: &Path, kind: InputKind, p: f64) -> wmscore::Result<BinaryMask> {
    match kind {
        InputKind::Likelihood => threshold_likelihood(&read_likelihood_png(path)?, p),
        InputKind::Mask => read_mask_png(path),
    }
}

struct Loaded {
    id: String,
    segmentation: BinaryMask,
    classifier: Option<BinaryMask>,
}

pub fn run(common: &CommonArgs, args: &ScoreArgs) -> CliResult<()> {
    let cfg = PipelineConfig::resolve(common, None)?;
    let files = list_pngs(&args.input).map_err(CliError::input)?;

    let loaded: Vec<Result<Loaded, String>> = files
        .par_iter()
        .map(|(id, path)| {
            let segmentation = load(path, args.kind, cfg.likelihood_threshold)
                .map_err(|e| e.to_string())?;
            let classifier = match &args.classifier {
                Some(dir) => {
                    let cpath = dir.join(format!("{id}.png"));
                    Some(load(&cpath, args.kind, cfg.likelihood_threshold).map_err(|e| e.to_string())?)
                }
                None => None,
            };
            Ok(Loaded {
                id: id.clone(),
                segmentation,
                classifier,
            })
        })
        .collect();
    let failures: Vec<&String> = loaded.iter().filter_map(|r| r.as_ref().err()).collect();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("{f}");
        }
        return Err(CliError::Input(format!("{} input file(s) could not be read", failures.len())));
    }
    let images: Vec<Loaded> = loaded.into_iter().filter_map(Result::ok).collect();

    let mut weights: HashMap<(usize, usize), WeightMap> = HashMap::new();
    for img in &images {
        let dims = img.segmentation.dimensions();
        if !weights.contains_key(&dims) {
            let w = gaussian_weights(dims.0, dims.1, cfg.params.sigma).map_err(CliError::config)?;
            weights.insert(dims, w);
        }
    }

    let scored = images
        .par_iter()
        .map(|img| {
            score_hybrid(
                &img.segmentation,
                img.classifier.as_ref(),
                cfg.image_count_threshold,
                &weights[&img.segmentation.dimensions()],
                &cfg.params,
            )
            .map_err(|e| CliError::Input(format!("{}: {e}", img.id)))
        })
        .collect::<CliResult<Vec<_>>>()?;

    if let Some(dir) = &args.labels_out {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        images
            .par_iter()
            .zip(&scored)
            .try_for_each(|(img, out)| write_mask_png(&dir.join(format!("{}.png", img.id)), &out.label))
            .map_err(CliError::input)?;
    }

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for (img, out) in images.iter().zip(&scored) {
        let _ = writeln!(csv, "{},{},{:.6},{:.6}", img.id, out.decision.w(), out.area, out.score);
    }
    crate::emit(args.output.as_deref(), &csv)
}
