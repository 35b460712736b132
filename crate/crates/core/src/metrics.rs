//! Pixel, image and ranking evaluation metrics.
//!
//! Ratios with a zero denominator are reported as `None` ("undefined") and
//! left out of aggregates instead of being coerced to 0 or 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Highest ground-truth distraction level.
pub const MAX_LEVEL: u8 = 3;

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Pixel confusion counts for the watermark class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl PixelConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts seen from the background class.
    pub fn background(&self) -> PixelConfusion {
        PixelConfusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    /// Fraction of ground-truth pixels that are watermark.
    pub fn watermark_prevalence(&self) -> Option<f64> {
        ratio(self.tp + self.fn_, self.total())
    }
}

impl Add for PixelConfusion {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for PixelConfusion {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for PixelConfusion {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iou: Option<f64>,
}

pub fn pixel_confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<PixelConfusion> {
    if pred.dimensions() != truth.dimensions() {
        return Err(Error::mismatch(pred.dimensions(), truth.dimensions()));
    }
    let mut c = PixelConfusion::default();
    for (&p, &t) in pred.values().iter().zip(truth.values()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn pixel_metrics(c: &PixelConfusion) -> PixelMetrics {
    PixelMetrics {
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

/// Per-class weights for [`mean_iou`]; must be non-negative and sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub watermark: f64,
    pub background: f64,
}

impl ClassWeights {
    /// Weights proportional to ground-truth pixel prevalence.
    pub fn from_confusion(c: &PixelConfusion) -> Option<Self> {
        let watermark = c.watermark_prevalence()?;
        Some(Self {
            watermark,
            background: 1.0 - watermark,
        })
    }
}

/// Mean of the watermark and background IOUs, optionally class-weighted.
pub fn mean_iou(watermark_iou: f64, background_iou: f64, weights: Option<ClassWeights>) -> Result<f64> {
    for iou in [watermark_iou, background_iou] {
        if !(0.0..=1.0).contains(&iou) {
            return Err(Error::InvalidValue(format!("IOU {iou} is outside [0, 1]")));
        }
    }
    match weights {
        None => Ok((watermark_iou + background_iou) / 2.0),
        Some(w) => {
            let valid = w.watermark >= 0.0
                && w.background >= 0.0
                && (w.watermark + w.background - 1.0).abs() <= 1e-9;
            if !valid {
                return Err(Error::InvalidParameter(format!(
                    "class weights ({}, {}) must be non-negative and sum to 1",
                    w.watermark, w.background
                )));
            }
            Ok(w.watermark * watermark_iou + w.background * background_iou)
        }
    }
}

/// Image-level confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageConfusion {
    pub itp: u64,
    pub ifp: u64,
    pub ifn: u64,
    pub itn: u64,
}

impl ImageConfusion {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.itp, self.itp + self.ifp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.itp, self.itp + self.ifn)
    }

    pub fn total(&self) -> u64 {
        self.itp + self.ifp + self.ifn + self.itn
    }
}

impl Add for ImageConfusion {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            itp: self.itp + o.itp,
            ifp: self.ifp + o.ifp,
            ifn: self.ifn + o.ifn,
            itn: self.itn + o.itn,
        }
    }
}

/// Counts image outcomes from `(predicted positive, truly positive)` pairs.
///
/// For label maps, an image is predicted positive when its final label map
/// has at least one watermark pixel.
pub fn image_confusion(decisions: &[(bool, bool)]) -> ImageConfusion {
    let mut c = ImageConfusion::default();
    for &(pred, truth) in decisions {
        match (pred, truth) {
            (true, true) => c.itp += 1,
            (true, false) => c.ifp += 1,
            (false, true) => c.ifn += 1,
            (false, false) => c.itn += 1,
        }
    }
    c
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "positive fraction beta must lie in (0, 1), got {beta}"
        )));
    }
    Ok(())
}

/// Image precision projected onto a population with positive fraction `beta`:
/// `beta * itp / (beta * itp + (1 - beta) * ifp)`.
///
/// `itp` and `ifp` should come from a balanced (50% positive) set; the
/// formula treats them as per-class detection rates.
pub fn e_precision(itp: u64, ifp: u64, beta: f64) -> Result<Option<f64>> {
    check_beta(beta)?;
    if itp + ifp == 0 {
        return Ok(None);
    }
    let pos = beta * itp as f64;
    Ok(Some(pos / (pos + (1.0 - beta) * ifp as f64)))
}

/// [`e_precision`] from a balanced-set image precision instead of counts.
pub fn e_precision_from_precision(i_precision: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(0.0..=1.0).contains(&i_precision) {
        return Err(Error::InvalidValue(format!(
            "image precision {i_precision} is outside [0, 1]"
        )));
    }
    let pos = beta * i_precision;
    Ok(pos / (pos + (1.0 - beta) * (1.0 - i_precision)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingCell {
    pub correct: u64,
    pub total: u64,
    /// `None` when no pair exists for the cell.
    pub percentage: Option<f64>,
}

/// Pairwise ranking accuracy per ordered level pair `(higher, lower)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    cells: BTreeMap<(u8, u8), RankingCell>,
}

impl RankingTable {
    pub fn get(&self, higher: u8, lower: u8) -> Option<&RankingCell> {
        self.cells.get(&(higher, lower))
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(u8, u8), &RankingCell)> {
        self.cells.iter()
    }

    /// Renders the table with lower levels as rows and higher levels as
    /// columns (highest first). Impossible or empty cells print `N/A`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let columns: Vec<u8> = (1..=MAX_LEVEL).rev().collect();
        out.push_str("level");
        for c in &columns {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for row in 0..MAX_LEVEL {
            let _ = write!(out, "{row}");
            for &col in &columns {
                match self.get(col, row).and_then(|c| c.percentage) {
                    Some(p) if col > row => {
                        let _ = write!(out, ",{p:.2}");
                    }
                    _ => out.push_str(",N/A"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// JSON-friendly view keyed by `"a>b"`.
    pub fn to_map(&self) -> BTreeMap<String, RankingCell> {
        self.cells
            .iter()
            .map(|(&(a, b), &c)| (format!("{a}>{b}"), c))
            .collect()
    }
}

/// Pairwise ranking accuracy between ground-truth levels.
///
/// For every pair of levels `a > b` present in `items`, counts the
/// cross-level pairs whose level-`a` item has a strictly higher predicted
/// score than the level-`b` item. Ties count as incorrect. When
/// `include_levels` is given, items at other levels are dropped first.
pub fn pairwise_ranking_table(items: &[(f64, u8)], include_levels: Option<&BTreeSet<u8>>) -> Result<RankingTable> {
    let mut by_level: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for &(score, level) in items {
        if level > MAX_LEVEL {
            return Err(Error::InvalidValue(format!(
                "ground-truth level {level} is outside 0..={MAX_LEVEL}"
            )));
        }
        if !score.is_finite() {
            return Err(Error::InvalidValue(format!("predicted score {score} is not finite")));
        }
        if include_levels.is_none_or(|set| set.contains(&level)) {
            by_level.entry(level).or_default().push(score);
        }
    }
    if by_level.len() < 2 {
        return Err(Error::InvalidValue(format!(
            "ranking needs items at two or more levels, found {}",
            by_level.len()
        )));
    }
    for scores in by_level.values_mut() {
        scores.sort_by(f64::total_cmp);
    }
    let mut cells = BTreeMap::new();
    for (&high, high_scores) in &by_level {
        for (&low, low_scores) in by_level.range(..high) {
            // For each higher-level item, the lower-level items strictly below it.
            let correct: u64 = high_scores
                .iter()
                .map(|&s| low_scores.partition_point(|&l| l < s) as u64)
                .sum();
            let total = (high_scores.len() * low_scores.len()) as u64;
            cells.insert(
                (high, low),
                RankingCell {
                    correct,
                    total,
                    percentage: ratio(correct, total).map(|r| 100.0 * r),
                },
            );
        }
    }
    Ok(RankingTable { cells })
}
