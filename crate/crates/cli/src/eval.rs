use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use wmscore::io::{list_pngs, read_annotation, read_mask_png, read_training_file};
use wmscore::metrics::{e_precision, image_confusion, mean_iou, pixel_metrics, ClassWeights, RankingCell};
use wmscore::{pairwise_ranking_table, pixel_confusion, rasterize_polygons, BinaryMask, PixelConfusion};

use crate::config::{CommonArgs, PipelineConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted <image_id>.png label maps
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground truth: <image_id>.png masks or <image_id>.json annotations
    #[arg(long)]
    pub truth: PathBuf,
    /// Score CSV from `wmscore score`, for the ranking table
    #[arg(long, requires = "levels")]
    pub scores: Option<PathBuf>,
    /// JSON-lines ratings (training format) giving each image's level
    #[arg(long, requires = "scores")]
    pub levels: Option<PathBuf>,
    /// Positive fraction used for projected image precision
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rank only images predicted positive (w = 1)
    #[arg(long)]
    pub positive_only: bool,
    /// JSON report path (stdout if omitted)
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Ranking table CSV path
    #[arg(long)]
    pub ranking_csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PixelReport {
    #[serde(flatten)]
    counts: PixelConfusion,
    precision: Option<f64>,
    recall: Option<f64>,
    iou: Option<f64>,
    background_iou: Option<f64>,
    mean_iou: Option<f64>,
    frequency_weighted_mean_iou: Option<f64>,
    watermark_prevalence: Option<f64>,
}

impl PixelReport {
    fn new(counts: PixelConfusion) -> Self {
        let m = pixel_metrics(&counts);
        let bg = pixel_metrics(&counts.background()).iou;
        let both = m.iou.zip(bg);
        Self {
            counts,
            precision: m.precision,
            recall: m.recall,
            iou: m.iou,
            background_iou: bg,
            mean_iou: both.and_then(|(w, b)| mean_iou(w, b, None).ok()),
            frequency_weighted_mean_iou: both.and_then(|(w, b)| {
                mean_iou(w, b, Some(ClassWeights::from_confusion(&counts)?)).ok()
            }),
            watermark_prevalence: counts.watermark_prevalence(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ImageReport {
    itp: u64,
    ifp: u64,
    ifn: u64,
    itn: u64,
    precision: Option<f64>,
    recall: Option<f64>,
    beta: f64,
    e_precision: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    images: usize,
    pixel: PixelReport,
    /// Pixel metrics over images whose ground truth has a watermark.
    pixel_watermarked: PixelReport,
    image: ImageReport,
    ranking: Option<BTreeMap<String, RankingCell>>,
}

fn load_truth(dir: &Path, id: &str) -> wmscore::Result<BinaryMask> {
    let png = dir.join(format!("{id}.png"));
    if png.is_file() {
        return read_mask_png(&png);
    }
    let json = dir.join(format!("{id}.json"));
    if json.is_file() {
        return rasterize_polygons(&read_annotation(&json)?);
    }
    Err(wmscore::Error::InvalidValue(format!(
        "no ground truth for {id} in {}",
        dir.display()
    )))
}

fn read_scores(path: &Path) -> CliResult<Vec<(String, u8, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == crate::score::CSV_HEADER => {}
        _ => {
            return Err(CliError::Input(format!(
                "{}: expected header `{}`",
                path.display(),
                crate::score::CSV_HEADER
            )))
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CliError::Input(format!("{}:{}: malformed row `{line}`", path.display(), idx + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        let w: u8 = fields[1].parse().map_err(|_| bad())?;
        let score: f64 = fields[3].parse().map_err(|_| bad())?;
        out.push((fields[0].to_string(), w, score));
    }
    Ok(out)
}

pub fn run(common: &CommonArgs, args: &EvalArgs) -> CliResult<()> {
    let cfg = PipelineConfig::resolve(common, None)?;
    let beta = args.beta.unwrap_or(cfg.beta);
    if !(beta > 0.0 && beta < 1.0) {
        return Err(CliError::Config(format!("beta {beta} must lie in (0, 1)")));
    }
    if !args.truth.is_dir() {
        return Err(CliError::Input(format!("truth directory {} not found", args.truth.display())));
    }
    let preds = list_pngs(&args.pred).map_err(CliError::input)?;

    let pairs = preds
        .par_iter()
        .map(|(id, path)| {
            let pred = read_mask_png(path)?;
            let truth = load_truth(&args.truth, id)?;
            let c = pixel_confusion(&pred, &truth)?;
            Ok((c, !pred.is_empty(), !truth.is_empty()))
        })
        .collect::<wmscore::Result<Vec<_>>>()
        .map_err(CliError::input)?;

    let pred_ids: BTreeSet<&str> = preds.iter().map(|(id, _)| id.as_str()).collect();
    for (id, _) in list_pngs(&args.truth).map_err(CliError::input)? {
        if !pred_ids.contains(id.as_str()) {
            return Err(CliError::Input(format!("no prediction for ground-truth image {id}")));
        }
    }

    let total: PixelConfusion = pairs.iter().map(|p| p.0).sum();
    let watermarked: PixelConfusion = pairs.iter().filter(|p| p.2).map(|p| p.0).sum();
    let decisions: Vec<(bool, bool)> = pairs.iter().map(|p| (p.1, p.2)).collect();
    let ic = image_confusion(&decisions);

    let ranking = match (&args.scores, &args.levels) {
        (Some(scores), Some(levels)) => {
            let records = read_training_file(levels).map_err(CliError::input)?;
            let level_of: BTreeMap<&str, u8> = records
                .iter()
                .map(|r| Ok((r.image_id.as_str(), r.level()?)))
                .collect::<wmscore::Result<_>>()
                .map_err(CliError::input)?;
            let mut items = Vec::new();
            for (id, w, score) in read_scores(scores)? {
                let level = *level_of
                    .get(id.as_str())
                    .ok_or_else(|| CliError::Input(format!("no rating for scored image {id}")))?;
                if !args.positive_only || w == 1 {
                    items.push((score, level));
                }
            }
            Some(pairwise_ranking_table(&items, None).map_err(CliError::input)?)
        }
        _ => None,
    };

    let report = Report {
        images: pairs.len(),
        pixel: PixelReport::new(total),
        pixel_watermarked: PixelReport::new(watermarked),
        image: ImageReport {
            itp: ic.itp,
            ifp: ic.ifp,
            ifn: ic.ifn,
            itn: ic.itn,
            precision: ic.precision(),
            recall: ic.recall(),
            beta,
            e_precision: e_precision(ic.itp, ic.ifp, beta).map_err(CliError::config)?,
        },
        ranking: ranking.as_ref().map(|t| t.to_map()),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(CliError::input)?;
    text.push('\n');
    crate::emit(args.output.as_deref(), &text)?;
    if let (Some(path), Some(table)) = (&args.ranking_csv, &ranking) {
        fs::write(path, table.to_csv()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
