//! Seeded synthetic datasets and a Monte-Carlo check of projected precision.
//!
//! # Random number generation
//!
//! All randomness comes from `ChaCha8Rng` (rand_chacha 0.9), a counter-based
//! generator whose output stream is fixed by its algorithm:
//!
//! * image `k` of a dataset uses `ChaCha8Rng::seed_from_u64(seed)` with
//!   stream number `k` (`set_stream(k)`), so every image is independent of
//!   how many draws the others made;
//! * uniforms come from `Rng::random::<f64>()` / `random_range`, and
//!   Gaussian noise from `rand_distr::StandardNormal` (ziggurat), scaled by
//!   the requested standard deviation.
//!
//! Per image the draws happen in this order: positive coin, shape count,
//! then per shape kind, area, aspect, centre (and retries on an empty
//! raster), then per-pixel likelihood noise in row-major order, then the
//! three rater noises.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{rasterize_polygons, AnnotationSet, BinaryMask, LikelihoodMap, Polygon};
use crate::metrics::ImageConfusion;
use crate::scoring::{distraction_score, ScoringParams};

/// Vertices used to outline an ellipse.
pub const ELLIPSE_VERTICES: usize = 32;

/// Number of simulated raters per image.
pub const RATERS: usize = 3;

const MAX_SHAPE_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    Uniform,
    CenterBiased,
}

/// Recipe for a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub image_count: usize,
    pub width: usize,
    pub height: usize,
    pub positive_fraction: f64,
    /// Area of each watermark shape as a fraction of the image, `[lo, hi]`.
    pub watermark_area_range: [f64; 2],
    pub placement: Placement,
    /// Standard deviation of per-pixel noise on the ideal likelihoods.
    pub likelihood_noise: f64,
    /// Standard deviation, in rating steps, of each rater's noise.
    pub rater_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            image_count: 100,
            width: 64,
            height: 64,
            positive_fraction: 0.625,
            watermark_area_range: [0.005, 0.1],
            placement: Placement::Uniform,
            likelihood_noise: 0.0,
            rater_noise: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidDimensions {
                width: self.width,
                height: self.height,
            });
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::InvalidParameter(format!(
                "positive_fraction {} is outside [0, 1]",
                self.positive_fraction
            )));
        }
        let [lo, hi] = self.watermark_area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "watermark_area_range [{lo}, {hi}] must lie within (0, 1] with lo <= hi"
            )));
        }
        for (name, v) in [
            ("likelihood_noise", self.likelihood_noise),
            ("rater_noise", self.rater_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        let pixels = (self.width * self.height) as f64;
        if lo * pixels < 1.0 {
            return Err(Error::Infeasible(format!(
                "smallest watermark area {lo} covers {:.3} pixels of a {}x{} image; need at least 1",
                lo * pixels,
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

/// One generated image.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub annotation: AnnotationSet,
    pub likelihood: LikelihoodMap,
    pub truth: BinaryMask,
    /// Noise-free distraction score of `truth`.
    pub oracle_score: f64,
    pub responses: [u8; RATERS],
}

impl SynthImage {
    pub fn is_positive(&self) -> bool {
        !self.annotation.polygons.is_empty()
    }
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sd * z
}

/// Axis-aligned box `(width, height)` with the requested area and aspect,
/// shrunk to fit inside the image.
fn fit_box(area: f64, aspect: f64, width: f64, height: f64) -> (f64, f64) {
    let mut w = (area * aspect).sqrt();
    let mut h = area / w;
    if w > width {
        w = width;
        h = (area / w).min(height);
    }
    if h > height {
        h = height;
        w = (area / h).min(width);
    }
    (w, h)
}

fn place(rng: &mut ChaCha8Rng, placement: Placement, extent: f64, size: f64) -> f64 {
    let lo = size / 2.0;
    let hi = extent - size / 2.0;
    if hi <= lo {
        return extent / 2.0;
    }
    match placement {
        Placement::Uniform => rng.random_range(lo..=hi),
        Placement::CenterBiased => (extent / 2.0 + normal(rng, extent / 8.0)).clamp(lo, hi),
    }
}

fn random_shape(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Polygon {
    let (width, height) = (spec.width as f64, spec.height as f64);
    let ellipse = rng.random_bool(0.5);
    let [lo, hi] = spec.watermark_area_range;
    let area = rng.random_range(lo..=hi) * width * height;
    let aspect = rng.random_range(-1.5f64..=1.5).exp();
    if ellipse {
        // Ellipse of area pi * rx * ry inscribed in a box; fall back to the
        // box itself when the ellipse cannot fit.
        let (bw, bh) = fit_box(area * 4.0 / std::f64::consts::PI, aspect, width, height);
        let cx = place(rng, spec.placement, width, bw);
        let cy = place(rng, spec.placement, height, bh);
        if bw * bh * std::f64::consts::PI / 4.0 + 1e-9 >= area {
            return (0..ELLIPSE_VERTICES)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / ELLIPSE_VERTICES as f64;
                    [cx + bw / 2.0 * t.cos(), cy + bh / 2.0 * t.sin()]
                })
                .collect();
        }
        let (bw, bh) = fit_box(area, aspect, width, height);
        return rectangle(cx, cy, bw, bh, width, height);
    }
    let (bw, bh) = fit_box(area, aspect, width, height);
    let cx = place(rng, spec.placement, width, bw);
    let cy = place(rng, spec.placement, height, bh);
    rectangle(cx, cy, bw, bh, width, height)
}

fn rectangle(cx: f64, cy: f64, w: f64, h: f64, width: f64, height: f64) -> Polygon {
    let x0 = (cx - w / 2.0).clamp(0.0, width - w);
    let y0 = (cy - h / 2.0).clamp(0.0, height - h);
    vec![[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]]
}

fn generate_image(spec: &SynthSpec, params: &ScoringParams, index: usize) -> Result<SynthImage> {
    let mut rng = image_rng(spec.seed, index);
    let id = image_id(index);
    let positive = rng.random::<f64>() < spec.positive_fraction;
    let mut annotation = AnnotationSet {
        image_id: id.clone(),
        width: spec.width,
        height: spec.height,
        polygons: Vec::new(),
    };
    let mut truth = rasterize_polygons(&annotation)?;
    if positive {
        let count = rng.random_range(1..=3usize);
        let mut attempts = 0;
        while truth.is_empty() {
            if attempts == MAX_SHAPE_ATTEMPTS {
                return Err(Error::Infeasible(format!(
                    "{id}: no watermark shape covered a pixel centre after {attempts} attempts"
                )));
            }
            attempts += 1;
            annotation.polygons = (0..count).map(|_| random_shape(&mut rng, spec)).collect();
            truth = rasterize_polygons(&annotation)?;
        }
    }

    let noisy: Vec<u8> = truth
        .values()
        .iter()
        .map(|&t| {
            let v = f64::from(t) + if spec.likelihood_noise > 0.0 {
                normal(&mut rng, spec.likelihood_noise)
            } else {
                0.0
            };
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    let likelihood = LikelihoodMap::from_bytes(spec.width, spec.height, &noisy)?;

    let oracle_score = distraction_score(&truth, params)?;
    let mut responses = [0u8; RATERS];
    for r in &mut responses {
        let noise = if spec.rater_noise > 0.0 {
            normal(&mut rng, spec.rater_noise)
        } else {
            0.0
        };
        *r = (3.0 * oracle_score + noise).round().clamp(0.0, 3.0) as u8;
    }

    Ok(SynthImage {
        annotation,
        likelihood,
        truth,
        oracle_score,
        responses,
    })
}

/// Generates `spec.image_count` images.
///
/// Likelihood maps are stored on the 8-bit grid (`b / 255`) so they survive
/// a PNG round trip unchanged.
pub fn generate_dataset(spec: &SynthSpec, params: &ScoringParams) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    params.validate()?;
    (0..spec.image_count)
        .map(|k| generate_image(spec, params, k))
        .collect()
}

/// Adds clamped Gaussian noise to a mask to produce a likelihood map, on the
/// 8-bit grid. Used to simulate a second detector over the same truth.
pub fn noisy_likelihood(truth: &BinaryMask, noise: f64, seed: u64, stream: u64) -> Result<LikelihoodMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let bytes: Vec<u8> = truth
        .values()
        .iter()
        .map(|&t| {
            let v = f64::from(t) + normal(&mut rng, noise);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    LikelihoodMap::from_bytes(truth.width(), truth.height(), &bytes)
}

/// Simulates detection on a population with positive fraction `beta` and
/// returns the empirical image precision.
///
/// Detection rates come from `confusion`: the true-positive rate is
/// `itp / (itp + ifn)` and the false-positive rate `ifp / (ifp + itn)`.
/// Returns `None` if nothing was detected.
pub fn sparse_eval_simulation(
    confusion: &ImageConfusion,
    beta: f64,
    population: u64,
    seed: u64,
) -> Result<Option<f64>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "positive fraction beta must lie in (0, 1), got {beta}"
        )));
    }
    let positives = confusion.itp + confusion.ifn;
    let negatives = confusion.ifp + confusion.itn;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidValue(
            "confusion needs both positive and negative images to define detection rates".into(),
        ));
    }
    let tpr = confusion.itp as f64 / positives as f64;
    let fpr = confusion.ifp as f64 / negatives as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tp, mut fp) = (0u64, 0u64);
    for _ in 0..population {
        let positive = rng.random::<f64>() < beta;
        let detected = rng.random::<f64>() < if positive { tpr } else { fpr };
        if detected {
            if positive {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok((tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::threshold_likelihood;

    fn params() -> ScoringParams {
        ScoringParams::new(78.0, 0.44, 0.05).unwrap()
    }

    fn spec() -> SynthSpec {
        SynthSpec {
            seed: 7,
            image_count: 30,
            width: 32,
            height: 24,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn all_negative_dataset() {
        let s = SynthSpec {
            positive_fraction: 0.0,
            rater_noise: 0.7,
            ..spec()
        };
        let data = generate_dataset(&s, &params()).unwrap();
        assert_eq!(data.len(), 30);
        for img in &data {
            assert!(img.annotation.polygons.is_empty());
            assert!(img.truth.is_empty());
            assert_eq!(img.oracle_score, 0.0);
        }
    }

    #[test]
    fn noiseless_likelihood_round_trips() {
        let data = generate_dataset(&spec(), &params()).unwrap();
        assert!(data.iter().any(|i| i.is_positive()));
        for img in &data {
            assert_eq!(threshold_likelihood(&img.likelihood, 0.5).unwrap(), img.truth);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SynthSpec {
            likelihood_noise: 0.2,
            rater_noise: 0.5,
            placement: Placement::CenterBiased,
            ..spec()
        };
        let a = generate_dataset(&s, &params()).unwrap();
        let b = generate_dataset(&s, &params()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SynthSpec { seed: 8, ..s }, &params()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn positives_have_one_to_three_shapes() {
        let data = generate_dataset(&SynthSpec { positive_fraction: 1.0, ..spec() }, &params()).unwrap();
        for img in &data {
            let n = img.annotation.polygons.len();
            assert!((1..=3).contains(&n));
            assert!(!img.truth.is_empty());
            assert_eq!(rasterize_polygons(&img.annotation).unwrap(), img.truth);
        }
    }

    #[test]
    fn noiseless_responses_follow_oracle() {
        let data = generate_dataset(&spec(), &params()).unwrap();
        for img in &data {
            let expected = (3.0 * img.oracle_score).round() as u8;
            assert_eq!(img.responses, [expected; 3]);
        }
    }

    #[test]
    fn spec_validation() {
        let p = params();
        let tiny = SynthSpec {
            width: 4,
            height: 4,
            watermark_area_range: [0.01, 0.02],
            ..spec()
        };
        assert!(matches!(generate_dataset(&tiny, &p), Err(Error::Infeasible(_))));
        let bad = SynthSpec { watermark_area_range: [0.0, 0.5], ..spec() };
        assert!(generate_dataset(&bad, &p).is_err());
        let bad = SynthSpec { positive_fraction: 1.5, ..spec() };
        assert!(generate_dataset(&bad, &p).is_err());
        let bad = SynthSpec { watermark_area_range: [0.5, 0.2], ..spec() };
        assert!(generate_dataset(&bad, &p).is_err());
    }

    #[test]
    fn full_area_range_still_fits() {
        let s = SynthSpec {
            positive_fraction: 1.0,
            watermark_area_range: [0.9, 1.0],
            ..spec()
        };
        for img in generate_dataset(&s, &params()).unwrap() {
            for poly in &img.annotation.polygons {
                for v in poly {
                    assert!(v[0] >= -1e-9 && v[0] <= 32.0 + 1e-9);
                    assert!(v[1] >= -1e-9 && v[1] <= 24.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn perfect_classifier_simulation() {
        let c = ImageConfusion { itp: 50, ifp: 0, ifn: 0, itn: 50 };
        assert_eq!(sparse_eval_simulation(&c, 0.5, 10_000, 1).unwrap(), Some(1.0));
        assert!(sparse_eval_simulation(&c, 0.0, 10, 1).is_err());
        let none = ImageConfusion { itp: 0, ifp: 0, ifn: 10, itn: 10 };
        assert_eq!(sparse_eval_simulation(&none, 0.5, 1000, 1).unwrap(), None);
    }
}
