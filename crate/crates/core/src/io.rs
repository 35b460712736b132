//! File formats: 8-bit grayscale PNG for masks and likelihood maps, JSON
//! annotations, JSON-lines training data and the fit summary.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{normalize_rater_scores, FitResult};
use crate::mask::{AnnotationSet, BinaryMask, LikelihoodMap};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}

fn write_gray(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or(Error::InvalidDimensions { width, height })?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a likelihood map; byte `b` becomes likelihood `b / 255`.
pub fn read_likelihood_png(path: &Path) -> Result<LikelihoodMap> {
    let (w, h, bytes) = read_gray(path)?;
    LikelihoodMap::from_bytes(w, h, &bytes)
}

pub fn write_likelihood_png(path: &Path, map: &LikelihoodMap) -> Result<()> {
    write_gray(path, map.width(), map.height(), map.to_bytes())
}

/// Reads a `{0, 255}` mask. Other byte values are rejected.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let (w, h, bytes) = read_gray(path)?;
    BinaryMask::from_bytes(w, h, &bytes).map_err(|e| match e {
        Error::InvalidValue(msg) => Error::InvalidValue(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray(path, mask.width(), mask.height(), mask.to_bytes())
}

pub fn read_annotation(path: &Path) -> Result<AnnotationSet> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let ann: AnnotationSet = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    ann.validate()?;
    Ok(ann)
}

pub fn write_annotation(path: &Path, ann: &AnnotationSet) -> Result<()> {
    let text = serde_json::to_string(ann).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// One line of a training file. Exactly one of `responses` and
/// `human_score` must be present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    pub image_id: String,
    pub mask_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_score: Option<f64>,
}

impl TrainingRecord {
    /// Normalized human score in `[0, 1]`.
    pub fn score(&self) -> Result<f64> {
        match (&self.responses, self.human_score) {
            (Some(r), None) => normalize_rater_scores(r),
            (None, Some(s)) if (0.0..=1.0).contains(&s) => Ok(s),
            (None, Some(s)) => Err(Error::InvalidValue(format!(
                "human_score {s} is outside [0, 1]"
            ))),
            _ => Err(Error::InvalidValue(
                "exactly one of \"responses\" and \"human_score\" is required".into(),
            )),
        }
    }

    /// Ground-truth level on the `0..=3` rating scale, rounded to nearest.
    pub fn level(&self) -> Result<u8> {
        Ok((3.0 * self.score()?).round() as u8)
    }

    /// Mask path resolved against the directory holding the training file.
    pub fn resolve_mask(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.mask_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// Parses JSON-lines training records. Blank lines are skipped; errors name
/// the 1-based line number.
pub fn parse_training_lines(text: &str, source: &str) -> Result<Vec<TrainingRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let context = format!("{source}:{}", idx + 1);
        let record: TrainingRecord = serde_json::from_str(line).map_err(|source| Error::Json {
            context: context.clone(),
            source,
        })?;
        record
            .score()
            .map_err(|e| Error::InvalidValue(format!("{context}: {e}")))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_training_file(path: &Path) -> Result<Vec<TrainingRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_training_lines(&text, &path.display().to_string())
}

/// Fit summary written by the `fit` command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub mse: f64,
    pub converged: bool,
}

impl From<&FitResult> for FitOutput {
    fn from(r: &FitResult) -> Self {
        Self {
            lambda: r.params.lambda,
            sigma: r.params.sigma,
            alpha: r.params.alpha,
            mse: r.mse,
            converged: r.converged,
        }
    }
}

/// Lists `*.png` files in a directory as `(stem, path)`, sorted by stem.
pub fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}
