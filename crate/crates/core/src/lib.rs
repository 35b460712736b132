//! Watermark distraction scoring.
//!
//! Turns per-pixel watermark likelihoods into a single score in `[0, 1]`
//! describing how distracting an image's watermarks are. The pipeline is:
//!
//! 1. threshold a likelihood map into a segmentation mask `S`
//! 2. decide whether the whole image is watermarked (`w`) by counting pixels
//! 3. gate the segmentation by the image decision, `L = w * S`
//! 4. weight `L` with a centred Gaussian and pass the weighted area through a
//!    sigmoid
//!
//! Alongside the pipeline the crate provides parameter fitting against human
//! ratings, the evaluation metrics used to judge detectors on sparse-positive
//! collections, and a seeded synthetic data generator.

pub mod error;
pub mod fitting;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
pub use fitting::{
    fit_params, grid_oracle, mse_objective, normalize_rater_scores, FitConfig, FitResult,
    GridAxis, ScoredExample,
};
pub use mask::{
    classify_image, hybrid_combine, rasterize_polygons, threshold_likelihood, AnnotationSet,
    BinaryMask, ImageDecision, LikelihoodMap, Polygon,
};
pub use metrics::{
    e_precision, image_confusion, mean_iou, pairwise_ranking_table, pixel_confusion,
    pixel_metrics, ClassWeights, ImageConfusion, PixelConfusion, PixelMetrics, RankingTable,
};
pub use pipeline::{score_hybrid, HybridOutput};
pub use scoring::{distraction_score, gaussian_weights, weighted_area, ScoringParams, WeightMap};
pub use synth::{generate_dataset, sparse_eval_simulation, Placement, SynthImage, SynthSpec};

/// Default per-pixel likelihood threshold.
pub const DEFAULT_LIKELIHOOD_THRESHOLD: f64 = 0.75;

/// Default image-level threshold, as a fraction of the image's pixel count.
pub const DEFAULT_IMAGE_COUNT_FRACTION: f64 = 0.001;
