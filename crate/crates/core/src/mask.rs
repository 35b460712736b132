//! Mask-level data types and the transformations between them.
//!
//! All grids are row-major: the value for column `x`, row `y` lives at
//! index `y * width + x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dimensions(width: usize, height: usize) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    width
        .checked_mul(height)
        .ok_or(Error::InvalidDimensions { width, height })
}

/// Per-pixel watermark likelihoods in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl LikelihoodMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let len = check_dimensions(width, height)?;
        if values.len() != len {
            return Err(Error::InvalidValue(format!(
                "expected {len} likelihoods for {width}x{height}, got {}",
                values.len()
            )));
        }
        if let Some((idx, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidValue(format!(
                "likelihood {v} at index {idx} is outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        let len = check_dimensions(width, height)?;
        Self::new(width, height, vec![value; len])
    }

    /// Builds a map from 8-bit samples, mapping byte `b` to `b / 255`.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let values = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(width, height, values)
    }

    /// Quantizes to 8-bit samples, rounding to the nearest `b / 255`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Per-pixel labels in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        let len = check_dimensions(width, height)?;
        if values.len() != len {
            return Err(Error::InvalidValue(format!(
                "expected {len} labels for {width}x{height}, got {}",
                values.len()
            )));
        }
        if let Some((idx, v)) = values.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::InvalidValue(format!(
                "label {v} at index {idx} is not 0 or 1"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let len = check_dimensions(width, height)?;
        Ok(Self {
            width,
            height,
            values: vec![0; len],
        })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        let len = check_dimensions(width, height)?;
        Ok(Self {
            width,
            height,
            values: vec![1; len],
        })
    }

    /// Builds a mask by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dimensions(width, height)?;
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| u8::from(f(x, y)))
            .collect();
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// True when no pixel is labelled as watermark.
    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// True when every one-pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(&a, &b)| a <= b)
    }

    /// Labels as `{0, 255}` bytes for 8-bit image output.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|&v| v * 255).collect()
    }

    /// Parses `{0, 255}` bytes. Any other byte value is rejected.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let values = bytes
            .iter()
            .enumerate()
            .map(|(idx, &b)| match b {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::InvalidValue(format!(
                    "mask byte {other} at index {idx} is not 0 or 255"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(width, height, values)
    }

    pub(crate) fn set(&mut self, x: usize, y: usize) {
        self.values[y * self.width + x] = 1;
    }
}

/// A closed polygon as a list of `[x, y]` vertices in pixel coordinates.
pub type Polygon = Vec<[f64; 2]>;

/// Polygon outlines of the watermark regions of one image.
///
/// An empty polygon list marks an image without watermarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub polygons: Vec<Polygon>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<()> {
        check_dimensions(self.width, self.height)?;
        for (idx, poly) in self.polygons.iter().enumerate() {
            if poly.len() < 3 {
                return Err(Error::InvalidAnnotation(format!(
                    "{}: polygon {idx} has {} vertices, need at least 3",
                    self.image_id,
                    poly.len()
                )));
            }
            if poly.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::InvalidAnnotation(format!(
                    "{}: polygon {idx} has a non-finite coordinate",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

/// Image-level watermark decision from the pixel-count threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ImageDecision {
    watermarked: bool,
    watermark_pixel_count: usize,
    threshold_used: usize,
}

impl ImageDecision {
    pub fn new(watermark_pixel_count: usize, threshold_used: usize) -> Self {
        Self {
            watermarked: watermark_pixel_count > threshold_used,
            watermark_pixel_count,
            threshold_used,
        }
    }

    pub fn is_watermarked(&self) -> bool {
        self.watermarked
    }

    /// The decision as the `{0, 1}` gate value.
    pub fn w(&self) -> u8 {
        u8::from(self.watermarked)
    }

    pub fn watermark_pixel_count(&self) -> usize {
        self.watermark_pixel_count
    }

    pub fn threshold_used(&self) -> usize {
        self.threshold_used
    }
}

/// Rasterizes annotation polygons by sampling pixel centres.
///
/// Each polygon is filled with the even-odd rule; a pixel is set when its
/// centre `(x + 0.5, y + 0.5)` is inside any polygon. Zero-area polygons
/// produce no pixels.
pub fn rasterize_polygons(ann: &AnnotationSet) -> Result<BinaryMask> {
    ann.validate()?;
    let mut mask = BinaryMask::zeros(ann.width, ann.height)?;
    let mut crossings = Vec::new();
    for poly in &ann.polygons {
        let (min_y, max_y) = poly
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v[1]), hi.max(v[1]))
            });
        let first_row = (min_y - 0.5).floor().max(0.0) as usize;
        let last_row = ((max_y - 0.5).ceil().max(0.0) as usize).min(ann.height - 1);
        if max_y < 0.0 || min_y > ann.height as f64 {
            continue;
        }
        for row in first_row..=last_row {
            let py = row as f64 + 0.5;
            crossings.clear();
            scanline_crossings(poly, py, &mut crossings);
            crossings.sort_by(f64::total_cmp);
            for span in crossings.chunks_exact(2) {
                fill_span(&mut mask, row, span[0], span[1]);
            }
        }
    }
    Ok(mask)
}

/// Pushes the x coordinate of every edge crossing of the horizontal line
/// `y = py`, using half-open edge inclusion so vertices are counted once.
fn scanline_crossings(poly: &[[f64; 2]], py: f64, out: &mut Vec<f64>) {
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > py) != (yj > py) {
            out.push((xj - xi) * (py - yi) / (yj - yi) + xi);
        }
        j = i;
    }
}

/// Sets pixels whose centre satisfies `left <= x + 0.5 < right`.
fn fill_span(mask: &mut BinaryMask, row: usize, left: f64, right: f64) {
    if !(left < right) {
        return;
    }
    let width = mask.width();
    let mut col = (left - 0.5).ceil().max(0.0) as usize;
    while col > 0 && left <= (col - 1) as f64 + 0.5 {
        col -= 1;
    }
    while col < width && (col as f64 + 0.5) < left {
        col += 1;
    }
    while col < width && (col as f64 + 0.5) < right {
        mask.set(col, row);
        col += 1;
    }
}

/// Marks pixels whose likelihood is at least `p`.
pub fn threshold_likelihood(map: &LikelihoodMap, p: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "likelihood threshold {p} is outside [0, 1]"
        )));
    }
    let values = map.values().iter().map(|&v| u8::from(v >= p)).collect();
    Ok(BinaryMask {
        width: map.width(),
        height: map.height(),
        values,
    })
}

/// Decides whether an image is watermarked.
///
/// The pixel threshold is `floor(t_frac * width * height)` and the image is
/// positive when the mask has strictly more one-pixels than that.
pub fn classify_image(mask: &BinaryMask, t_frac: f64) -> Result<ImageDecision> {
    if !(0.0..=1.0).contains(&t_frac) {
        return Err(Error::InvalidParameter(format!(
            "image count fraction {t_frac} is outside [0, 1]"
        )));
    }
    let threshold = (t_frac * mask.len() as f64).floor() as usize;
    Ok(ImageDecision::new(mask.count_ones(), threshold))
}

/// Gates a segmentation mask by the image decision: `L = w * S`.
pub fn hybrid_combine(decision: &ImageDecision, segmentation: &BinaryMask) -> BinaryMask {
    if decision.is_watermarked() {
        segmentation.clone()
    } else {
        BinaryMask {
            width: segmentation.width,
            height: segmentation.height,
            values: vec![0; segmentation.values.len()],
        }
    }
}
