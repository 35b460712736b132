//! Gaussian-weighted area and the sigmoid distraction score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Largest magnitude passed to `exp` in the sigmoid.
const MAX_EXPONENT: f64 = 700.0;

/// Parameters of the distraction score.
///
/// `sigma` is measured in normalized image units, where each axis spans
/// `[-0.5, 0.5]` across pixel centres. `alpha` is in weighted-area units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
}

impl ScoringParams {
    pub fn new(lambda: f64, sigma: f64, alpha: f64) -> Result<Self> {
        let params = Self {
            lambda,
            sigma,
            alpha,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Normalized per-pixel location weights for one image size.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl WeightMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.weights[y * self.width + x]
    }
}

/// Normalized coordinate of pixel centre `i` on an axis of `len` pixels.
///
/// Written as `(2i + 1 - len) / 2len` so mirrored pixels get exactly
/// negated coordinates.
pub fn normalized_coordinate(i: usize, len: usize) -> f64 {
    (2.0 * i as f64 + 1.0 - len as f64) / (2.0 * len as f64)
}

/// Isotropic Gaussian centred on the image, normalized to sum to one.
pub fn gaussian_weights(width: usize, height: usize, sigma: f64) -> Result<WeightMap> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let denom = 2.0 * sigma * sigma;
    let xs: Vec<f64> = (0..width).map(|i| normalized_coordinate(i, width)).collect();
    let mut weights = Vec::with_capacity(width * height);
    for j in 0..height {
        let y = normalized_coordinate(j, height);
        for &x in &xs {
            weights.push((-(x * x + y * y) / denom).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w == 0.0) || total == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma {sigma} is too small for a {width}x{height} image: corner weights underflow"
        )));
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(WeightMap {
        width,
        height,
        weights,
    })
}

/// Gaussian-weighted watermark area `G = sum(g * L)`, in `[0, 1]`.
pub fn weighted_area(mask: &BinaryMask, weights: &WeightMap) -> Result<f64> {
    if mask.dimensions() != weights.dimensions() {
        return Err(Error::mismatch(mask.dimensions(), weights.dimensions()));
    }
    let g: f64 = mask
        .values()
        .iter()
        .zip(weights.weights())
        .filter(|(&l, _)| l == 1)
        .map(|(_, &w)| w)
        .sum();
    Ok(g.min(1.0))
}

/// Logistic response `1 / (1 + exp(-lambda (g - alpha)))`, safe for any
/// finite input.
pub fn sigmoid_score(g: f64, lambda: f64, alpha: f64) -> f64 {
    let z = (-lambda * (g - alpha)).clamp(-MAX_EXPONENT, MAX_EXPONENT);
    1.0 / (1.0 + z.exp())
}

/// Score from a precomputed weighted area. `None` marks an empty label map,
/// which always scores exactly zero.
pub fn score_from_area(area: Option<f64>, lambda: f64, alpha: f64) -> f64 {
    match area {
        None => 0.0,
        Some(g) => sigmoid_score(g, lambda, alpha),
    }
}

/// Weighted area of a mask, or `None` for an empty mask.
pub fn mask_area(mask: &BinaryMask, weights: &WeightMap) -> Result<Option<f64>> {
    if mask.is_empty() {
        if mask.dimensions() != weights.dimensions() {
            return Err(Error::mismatch(mask.dimensions(), weights.dimensions()));
        }
        return Ok(None);
    }
    weighted_area(mask, weights).map(Some)
}

/// Distraction score of a label map using precomputed weights.
pub fn distraction_score_with(
    mask: &BinaryMask,
    weights: &WeightMap,
    params: &ScoringParams,
) -> Result<f64> {
    params.validate()?;
    let area = mask_area(mask, weights)?;
    Ok(score_from_area(area, params.lambda, params.alpha))
}

/// Distraction score of a label map. Empty maps score exactly zero.
pub fn distraction_score(mask: &BinaryMask, params: &ScoringParams) -> Result<f64> {
    params.validate()?;
    if mask.is_empty() {
        return Ok(0.0);
    }
    let weights = gaussian_weights(mask.width(), mask.height(), params.sigma)?;
    distraction_score_with(mask, &weights, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(lambda: f64, sigma: f64, alpha: f64) -> ScoringParams {
        ScoringParams::new(lambda, sigma, alpha).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ScoringParams::new(0.0, 0.4, 0.1).is_err());
        assert!(ScoringParams::new(1.0, -0.4, 0.1).is_err());
        assert!(ScoringParams::new(1.0, 0.4, 1.1).is_err());
        assert!(ScoringParams::new(1.0, 0.4, f64::NAN).is_err());
        assert!(ScoringParams::new(78.0, 0.44, 0.0).is_ok());
    }

    #[test]
    fn single_pixel_weight_is_one() {
        let w = gaussian_weights(1, 1, 0.44).unwrap();
        assert_eq!(w.weights(), &[1.0]);
    }

    #[test]
    fn center_carries_max_weight() {
        for (w, h) in [(5, 5), (6, 4), (7, 10), (1, 9)] {
            let map = gaussian_weights(w, h, 0.44).unwrap();
            let max = map.weights().iter().cloned().fold(0.0, f64::max);
            let cx = [(w - 1) / 2, w / 2];
            let cy = [(h - 1) / 2, h / 2];
            for x in cx {
                for y in cy {
                    assert_eq!(map.get(x, y), max);
                }
            }
        }
    }

    #[test]
    fn corner_to_center_ratio() {
        // Unnormalized ratio at offset (0.5, 0.5) from the closed form.
        let expected = (-0.5f64 / (2.0 * 0.44 * 0.44)).exp();
        assert!((expected - 0.2749).abs() < 5e-5);
        // Corner pixel centres approach that offset as the image grows.
        let n = 2001;
        let map = gaussian_weights(n, n, 0.44).unwrap();
        let center = map.get(n / 2, n / 2);
        let corner = map.get(0, 0);
        let x = normalized_coordinate(0, n);
        let exact = (-(2.0 * x * x) / (2.0 * 0.44 * 0.44)).exp();
        assert!((corner / center - exact).abs() < 1e-12);
        assert!((corner / center - expected).abs() < 1e-3);
    }

    #[test]
    fn weights_reject_bad_sigma() {
        assert!(gaussian_weights(4, 4, 0.0).is_err());
        assert!(gaussian_weights(4, 4, f64::INFINITY).is_err());
        assert!(gaussian_weights(64, 64, 1e-4).is_err());
        assert!(gaussian_weights(0, 4, 0.4).is_err());
    }

    #[test]
    fn weighted_area_examples() {
        let w = gaussian_weights(7, 5, 0.44).unwrap();
        let ones = BinaryMask::ones(7, 5).unwrap();
        assert!((weighted_area(&ones, &w).unwrap() - 1.0).abs() < 1e-12);
        let zeros = BinaryMask::zeros(7, 5).unwrap();
        assert_eq!(weighted_area(&zeros, &w).unwrap(), 0.0);
        let other = BinaryMask::zeros(5, 7).unwrap();
        assert!(matches!(
            weighted_area(&other, &w),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn center_pixel_of_three_by_three() {
        // Direct summation over the 9 closed-form weights.
        let s = 0.44f64;
        let g = |x: f64, y: f64| (-(x * x + y * y) / (2.0 * s * s)).exp();
        let third = 1.0 / 3.0;
        let mut total = 0.0;
        for y in [-third, 0.0, third] {
            for x in [-third, 0.0, third] {
                total += g(x, y);
            }
        }
        let expected = 1.0 / total;
        let mask = BinaryMask::from_fn(3, 3, |x, y| x == 1 && y == 1).unwrap();
        let w = gaussian_weights(3, 3, s).unwrap();
        let got = weighted_area(&mask, &w).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn empty_mask_scores_zero() {
        let zeros = BinaryMask::zeros(8, 8).unwrap();
        assert_eq!(distraction_score(&zeros, &params(78.0, 0.44, 0.0)).unwrap(), 0.0);
        assert_eq!(distraction_score(&zeros, &params(1.0, 2.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn midpoint_scores_half() {
        let mask = BinaryMask::from_fn(9, 9, |x, y| x < 4 && y < 6).unwrap();
        let w = gaussian_weights(9, 9, 0.3).unwrap();
        let g = weighted_area(&mask, &w).unwrap();
        let p = params(78.0, 0.3, g);
        assert_eq!(distraction_score(&mask, &p).unwrap(), 0.5);
    }

    #[test]
    fn full_mask_saturates() {
        let ones = BinaryMask::ones(16, 16).unwrap();
        let s = distraction_score(&ones, &params(78.0, 0.44, 0.05)).unwrap();
        let expected = 1.0 / (1.0 + (-78.0f64 * 0.95).exp());
        assert!((s - expected).abs() < 1e-15);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn sigmoid_is_overflow_safe() {
        assert_eq!(sigmoid_score(1.0, 1e6, 0.0), 1.0);
        let tiny = sigmoid_score(0.0, 1e6, 1.0);
        assert!(tiny >= 0.0 && tiny < 1e-300);
        assert!(sigmoid_score(0.0, 1000.0, 1.0).is_finite());
    }

    fn arb_dims() -> impl Strategy<Value = (usize, usize)> {
        (1usize..24, 1usize..24)
    }

    proptest! {
        #[test]
        fn weights_normalized_and_symmetric((w, h) in arb_dims(), sigma in 0.05f64..3.0) {
            let map = gaussian_weights(w, h, sigma).unwrap();
            let sum: f64 = map.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            for y in 0..h {
                for x in 0..w {
                    let v = map.get(x, y);
                    prop_assert!(v > 0.0);
                    prop_assert!((v - map.get(w - 1 - x, y)).abs() <= 1e-12);
                    prop_assert!((v - map.get(x, h - 1 - y)).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn score_grows_with_area(
            (w, h) in arb_dims(),
            seed in proptest::collection::vec(any::<bool>(), 576),
            extra in proptest::collection::vec(any::<bool>(), 576),
            lambda in 0.1f64..200.0,
            sigma in 0.05f64..2.0,
            alpha in 0.0f64..=1.0,
        ) {
            let p = params(lambda, sigma, alpha);
            let small = BinaryMask::from_fn(w, h, |x, y| seed[y * 24 + x]).unwrap();
            let large = BinaryMask::from_fn(w, h, |x, y| seed[y * 24 + x] || extra[y * 24 + x]).unwrap();
            let a = distraction_score(&small, &p).unwrap();
            let b = distraction_score(&large, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(a <= b);
        }

        #[test]
        fn lambda_sharpens_around_midpoint(g in 0.0f64..=1.0, alpha in 0.0f64..=1.0, l1 in 0.1f64..100.0, dl in 0.0f64..100.0) {
            let lo = sigmoid_score(g, l1, alpha);
            let hi = sigmoid_score(g, l1 + dl, alpha);
            if g > alpha {
                prop_assert!(hi >= lo);
            } else if g < alpha {
                prop_assert!(hi <= lo);
            } else {
                prop_assert_eq!(hi, 0.5);
            }
        }
    }
}
