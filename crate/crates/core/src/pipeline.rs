//! The hybrid scoring pipeline for a single image.

use crate::error::{Error, Result};
use crate::mask::{classify_image, hybrid_combine, BinaryMask, ImageDecision};
use crate::scoring::{mask_area, score_from_area, ScoringParams, WeightMap};

#[derive(Clone, Debug, PartialEq)]
pub struct HybridOutput {
    pub decision: ImageDecision,
    /// Final label map `L = w * S`.
    pub label: BinaryMask,
    /// Weighted area of `label`; zero when it is empty.
    pub area: f64,
    pub score: f64,
}

/// Gates `segmentation` by an image decision and scores the result.
///
/// The decision is taken from `classifier` when given (a separate
/// classification tower), otherwise from `segmentation` itself.
pub fn score_hybrid(
    segmentation: &BinaryMask,
    classifier: Option<&BinaryMask>,
    t_frac: f64,
    weights: &WeightMap,
    params: &ScoringParams,
) -> Result<HybridOutput> {
    params.validate()?;
    let tower = classifier.unwrap_or(segmentation);
    if tower.dimensions() != segmentation.dimensions() {
        return Err(Error::mismatch(tower.dimensions(), segmentation.dimensions()));
    }
    let decision = classify_image(tower, t_frac)?;
    let label = hybrid_combine(&decision, segmentation);
    let area = mask_area(&label, weights)?;
    Ok(HybridOutput {
        decision,
        score: score_from_area(area, params.lambda, params.alpha),
        area: area.unwrap_or(0.0),
        label,
    })
}
