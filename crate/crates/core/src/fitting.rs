//! Fitting `(lambda, sigma, alpha)` to human distraction ratings.
//!
//! The fitter minimizes mean squared error between predicted scores and
//! normalized ratings. It starts from an exhaustive coarse grid, then
//! refines locally: for a fixed `sigma` the weighted areas are cached and
//! `(lambda, alpha)` is solved by damped Gauss-Newton (Levenberg-Marquardt);
//! `sigma` itself is refined by golden-section search over that profile.
//! [`grid_oracle`] runs the same grid exhaustively and nothing else, so
//! `fit_params` can be checked against it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scoring::{gaussian_weights, mask_area, score_from_area, sigmoid_score, ScoringParams, WeightMap};

/// A ground-truth label map paired with its normalized human rating.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredExample {
    pub label: BinaryMask,
    pub human_score: f64,
}

impl ScoredExample {
    pub fn new(label: BinaryMask, human_score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&human_score) {
            return Err(Error::InvalidValue(format!(
                "human score {human_score} is outside [0, 1]"
            )));
        }
        Ok(Self { label, human_score })
    }
}

/// Evenly spaced values on `[min, max]`, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    pub const fn new(min: f64, max: f64, steps: usize) -> Self {
        Self { min, max, steps }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                if k == self.steps - 1 {
                    self.max
                } else {
                    self.min + k as f64 * step
                }
            })
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.steps == 0 || !self.min.is_finite() || !self.max.is_finite() || self.min > self.max {
            return Err(Error::InvalidParameter(format!(
                "{name} grid [{}, {}] x {} is invalid",
                self.min, self.max, self.steps
            )));
        }
        Ok(())
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// Grid ranges, which double as box constraints, and refinement budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda: GridAxis,
    pub sigma: GridAxis,
    pub alpha: GridAxis,
    /// Budget of golden-section steps on `sigma`.
    pub refine_iterations: usize,
    /// Relative objective improvement below which the inner solve stops.
    pub tolerance: f64,
    /// Seeds the restarts of the final `(lambda, alpha)` polish.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: GridAxis::new(1.0, 200.0, 40),
            sigma: GridAxis::new(0.05, 2.0, 40),
            alpha: GridAxis::new(0.0, 0.5, 26),
            refine_iterations: 200,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        self.lambda.validate("lambda")?;
        self.sigma.validate("sigma")?;
        self.alpha.validate("alpha")?;
        if self.lambda.min <= 0.0 {
            return Err(Error::InvalidParameter("lambda grid must be positive".into()));
        }
        if self.sigma.min <= 0.0 {
            return Err(Error::InvalidParameter("sigma grid must be positive".into()));
        }
        if self.alpha.min < 0.0 || self.alpha.max > 1.0 {
            return Err(Error::InvalidParameter("alpha grid must lie in [0, 1]".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ScoringParams,
    pub mse: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Averages integer ratings on the `0..=3` scale and maps them to `[0, 1]`.
pub fn normalize_rater_scores(responses: &[u8]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::InvalidValue("no rater responses".into()));
    }
    if let Some(r) = responses.iter().find(|&&r| r > 3) {
        return Err(Error::InvalidValue(format!(
            "rater response {r} is outside 0..=3"
        )));
    }
    let sum: u32 = responses.iter().map(|&r| u32::from(r)).sum();
    Ok(f64::from(sum) / (3.0 * responses.len() as f64))
}

/// Weighted areas of every example for one `sigma`; `None` for empty labels.
fn areas_for_sigma(data: &[ScoredExample], sigma: f64) -> Result<Vec<Option<f64>>> {
    let mut weights: HashMap<(usize, usize), WeightMap> = HashMap::new();
    for ex in data {
        let dims = ex.label.dimensions();
        if !weights.contains_key(&dims) {
            weights.insert(dims, gaussian_weights(dims.0, dims.1, sigma)?);
        }
    }
    data.par_iter()
        .map(|ex| mask_area(&ex.label, &weights[&ex.label.dimensions()]))
        .collect()
}

/// Mean squared error from cached areas. Summation runs in example order.
fn mse_from_areas(areas: &[Option<f64>], targets: &[f64], lambda: f64, alpha: f64) -> f64 {
    let sse: f64 = areas
        .iter()
        .zip(targets)
        .map(|(&a, &y)| {
            let d = score_from_area(a, lambda, alpha) - y;
            d * d
        })
        .sum();
    sse / areas.len() as f64
}

/// Mean squared error between predicted scores and human scores.
pub fn mse_objective(params: &ScoringParams, data: &[ScoredExample]) -> Result<f64> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let areas = areas_for_sigma(data, params.sigma)?;
    let targets: Vec<f64> = data.iter().map(|e| e.human_score).collect();
    Ok(mse_from_areas(&areas, &targets, params.lambda, params.alpha))
}

fn check_fit_data(data: &[ScoredExample], config: &FitConfig) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.iter().all(|e| e.label.is_empty()) {
        return Err(Error::DegenerateData("every label map is empty".into()));
    }
    let first = data[0].human_score;
    if data.iter().all(|e| e.human_score == first) {
        return Err(Error::DegenerateData(format!(
            "all {} human scores are identical",
            data.len()
        )));
    }
    Ok(())
}

/// Exhaustive search over the configured grid.
pub fn grid_oracle(data: &[ScoredExample], config: &FitConfig) -> Result<FitResult> {
    check_fit_data(data, config)?;
    let targets: Vec<f64> = data.iter().map(|e| e.human_score).collect();
    let lambdas = config.lambda.values();
    let alphas = config.alpha.values();
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut evaluations = 0;
    for sigma in config.sigma.values() {
        let areas = areas_for_sigma(data, sigma)?;
        for &lambda in &lambdas {
            for &alpha in &alphas {
                let mse = mse_from_areas(&areas, &targets, lambda, alpha);
                evaluations += 1;
                if best.is_none_or(|b| mse < b.3) {
                    best = Some((lambda, sigma, alpha, mse));
                }
            }
        }
    }
    let (lambda, sigma, alpha, mse) = best.expect("grid is non-empty");
    Ok(FitResult {
        params: ScoringParams { lambda, sigma, alpha },
        mse,
        evaluations,
        converged: true,
    })
}

#[derive(Clone, Copy, Debug)]
struct InnerFit {
    lambda: f64,
    alpha: f64,
    mse: f64,
    converged: bool,
}

/// Solves `(lambda, alpha)` for fixed areas by projected Levenberg-Marquardt.
struct InnerSolver<'a> {
    areas: &'a [Option<f64>],
    targets: &'a [f64],
    lambda_box: GridAxis,
    alpha_box: GridAxis,
    tolerance: f64,
    evaluations: usize,
}

impl InnerSolver<'_> {
    const MAX_ITERATIONS: usize = 500;

    fn mse(&mut self, lambda: f64, alpha: f64) -> f64 {
        self.evaluations += 1;
        mse_from_areas(self.areas, self.targets, lambda, alpha)
    }

    fn solve(&mut self, lambda: f64, alpha: f64) -> InnerFit {
        let mut lambda = self.lambda_box.clamp(lambda);
        let mut alpha = self.alpha_box.clamp(alpha);
        let mut mse = self.mse(lambda, alpha);
        let mut damping = 1e-3;
        let mut small_steps = 0;
        for _ in 0..Self::MAX_ITERATIONS {
            // Normal equations over the non-empty examples.
            let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&area, &y) in self.areas.iter().zip(self.targets) {
                let Some(g) = area else { continue };
                let s = sigmoid_score(g, lambda, alpha);
                let ds = s * (1.0 - s);
                let j1 = ds * (g - alpha);
                let j2 = -lambda * ds;
                let r = s - y;
                a11 += j1 * j1;
                a12 += j1 * j2;
                a22 += j2 * j2;
                g1 += j1 * r;
                g2 += j2 * r;
            }
            if g1 == 0.0 && g2 == 0.0 {
                return InnerFit { lambda, alpha, mse, converged: true };
            }
            let mut accepted = false;
            while damping < 1e16 {
                let d11 = a11 + damping * a11.max(1e-300);
                let d22 = a22 + damping * a22.max(1e-300);
                let det = d11 * d22 - a12 * a12;
                if det > 0.0 && det.is_finite() {
                    let step_l = -(d22 * g1 - a12 * g2) / det;
                    let step_a = -(d11 * g2 - a12 * g1) / det;
                    let next_l = self.lambda_box.clamp(lambda + step_l);
                    let next_a = self.alpha_box.clamp(alpha + step_a);
                    let next = self.mse(next_l, next_a);
                    if next < mse {
                        let improvement = mse - next;
                        lambda = next_l;
                        alpha = next_a;
                        let previous = mse;
                        mse = next;
                        damping = (damping / 3.0).max(1e-12);
                        accepted = true;
                        // Two consecutive small improvements end the solve.
                        if improvement <= self.tolerance * previous {
                            small_steps += 1;
                            if small_steps == 2 {
                                return InnerFit { lambda, alpha, mse, converged: true };
                            }
                        } else {
                            small_steps = 0;
                        }
                        break;
                    }
                }
                damping *= 4.0;
            }
            if !accepted {
                // No descent step exists at machine precision.
                return InnerFit { lambda, alpha, mse, converged: true };
            }
        }
        InnerFit { lambda, alpha, mse, converged: false }
    }
}

/// Fits scoring parameters by grid search plus local refinement.
///
/// The result never has a higher objective than the best grid point.
pub fn fit_params(data: &[ScoredExample], config: &FitConfig) -> Result<FitResult> {
    check_fit_data(data, config)?;
    let targets: Vec<f64> = data.iter().map(|e| e.human_score).collect();
    let lambdas = config.lambda.values();
    let alphas = config.alpha.values();
    let sigmas = config.sigma.values();

    // Coarse grid, cached areas per sigma.
    struct SigmaRow {
        areas: Vec<Option<f64>>,
        lambda: f64,
        alpha: f64,
        mse: f64,
    }
    let rows: Vec<SigmaRow> = sigmas
        .par_iter()
        .map(|&sigma| -> Result<SigmaRow> {
            let areas = areas_for_sigma(data, sigma)?;
            let mut best = (lambdas[0], alphas[0], f64::INFINITY);
            for &lambda in &lambdas {
                for &alpha in &alphas {
                    let mse = mse_from_areas(&areas, &targets, lambda, alpha);
                    if mse < best.2 {
                        best = (lambda, alpha, mse);
                    }
                }
            }
            Ok(SigmaRow { areas, lambda: best.0, alpha: best.1, mse: best.2 })
        })
        .collect::<Result<_>>()?;
    let mut evaluations = sigmas.len() * lambdas.len() * alphas.len();

    let mut grid_best = 0;
    for (k, row) in rows.iter().enumerate() {
        if row.mse < rows[grid_best].mse {
            grid_best = k;
        }
    }
    let grid_params = ScoringParams {
        lambda: rows[grid_best].lambda,
        sigma: sigmas[grid_best],
        alpha: rows[grid_best].alpha,
    };

    let solver = |areas: &[Option<f64>], start: (f64, f64), evals: &mut usize| -> InnerFit {
        let mut s = InnerSolver {
            areas,
            targets: &targets,
            lambda_box: config.lambda,
            alpha_box: config.alpha,
            tolerance: config.tolerance,
            evaluations: 0,
        };
        let fit = s.solve(start.0, start.1);
        *evals += s.evaluations;
        fit
    };

    // Profile over the sigma grid.
    let profile: Vec<(InnerFit, usize)> = rows
        .par_iter()
        .map(|row| {
            let mut evals = 0;
            let fit = solver(&row.areas, (row.lambda, row.alpha), &mut evals);
            (fit, evals)
        })
        .collect();
    evaluations += profile.iter().map(|p| p.1).sum::<usize>();
    let mut k_best = 0;
    for (k, (fit, _)) in profile.iter().enumerate() {
        if fit.mse < profile[k_best].0.mse {
            k_best = k;
        }
    }
    let mut best_sigma = sigmas[k_best];
    let mut best = profile[k_best].0;

    // Golden-section search on sigma around the best profile point.
    let mut converged = true;
    if sigmas.len() > 1 {
        let mut lo = sigmas[k_best.saturating_sub(1)];
        let mut hi = sigmas[(k_best + 1).min(sigmas.len() - 1)];
        let width_tol = 1e-10 * (config.sigma.max - config.sigma.min).max(f64::MIN_POSITIVE);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let evaluate = |sigma: f64, start: (f64, f64), evals: &mut usize| -> Result<InnerFit> {
            let areas = areas_for_sigma(data, sigma)?;
            Ok(solver(&areas, start, evals))
        };
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let mut fc = evaluate(c, (best.lambda, best.alpha), &mut evaluations)?;
        let mut fd = evaluate(d, (best.lambda, best.alpha), &mut evaluations)?;
        let mut iterations = 0;
        while hi - lo > width_tol {
            if iterations == config.refine_iterations {
                converged = false;
                break;
            }
            iterations += 1;
            if fc.mse <= fd.mse {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = evaluate(c, (fd.lambda, fd.alpha), &mut evaluations)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = evaluate(d, (fc.lambda, fc.alpha), &mut evaluations)?;
            }
            for (sigma, fit) in [(c, fc), (d, fd)] {
                if fit.mse < best.mse {
                    best = fit;
                    best_sigma = sigma;
                }
            }
        }
    }

    // Seeded restarts of the inner solve at the chosen sigma.
    let areas = areas_for_sigma(data, best_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let restarts = [(best.lambda, best.alpha)]
        .into_iter()
        .chain((0..4).map(|_| {
            (
                rng.random_range(config.lambda.min..=config.lambda.max),
                rng.random_range(config.alpha.min..=config.alpha.max),
            )
        }))
        .collect::<Vec<_>>();
    for start in restarts {
        let fit = solver(&areas, start, &mut evaluations);
        if fit.mse < best.mse {
            best = fit;
        }
    }
    converged &= best.converged;

    let refined = ScoringParams {
        lambda: best.lambda,
        sigma: best_sigma,
        alpha: best.alpha,
    };
    let refined_mse = mse_objective(&refined, data)?;
    let grid_mse = mse_objective(&grid_params, data)?;
    evaluations += 2;
    let (params, mse) = if refined_mse <= grid_mse {
        (refined, refined_mse)
    } else {
        (grid_params, grid_mse)
    };
    Ok(FitResult {
        params,
        mse,
        evaluations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::distraction_score;

    fn rect_mask(n: usize, x0: usize, y0: usize, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h).unwrap()
    }

    fn synthetic(params: &ScoringParams) -> Vec<ScoredExample> {
        let n = 24;
        let mut out = Vec::new();
        for size in 1..=12 {
            for offset in [0, 3, 6] {
                let x0 = (offset + size / 2).min(n - size);
                let mask = rect_mask(n, x0, offset, size, size);
                let y = distraction_score(&mask, params).unwrap();
                out.push(ScoredExample::new(mask, y).unwrap());
            }
        }
        out.push(ScoredExample::new(BinaryMask::zeros(n, n).unwrap(), 0.0).unwrap());
        out
    }

    fn small_config() -> FitConfig {
        FitConfig {
            lambda: GridAxis::new(1.0, 200.0, 12),
            sigma: GridAxis::new(0.05, 2.0, 12),
            alpha: GridAxis::new(0.0, 0.5, 11),
            ..FitConfig::default()
        }
    }

    #[test]
    fn rater_normalization() {
        assert_eq!(normalize_rater_scores(&[3, 3, 3]).unwrap(), 1.0);
        assert_eq!(normalize_rater_scores(&[0, 0, 0]).unwrap(), 0.0);
        assert!((normalize_rater_scores(&[1, 2, 3]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(normalize_rater_scores(&[]).is_err());
        assert!(normalize_rater_scores(&[1, 4]).is_err());
    }

    #[test]
    fn grid_axis_values() {
        assert_eq!(GridAxis::new(0.0, 0.5, 26).values()[25], 0.5);
        assert_eq!(GridAxis::new(0.0, 0.5, 26).values()[10], 0.2);
        assert_eq!(GridAxis::new(2.0, 3.0, 1).values(), vec![2.0]);
        assert_eq!(GridAxis::new(1.0, 200.0, 40).values().len(), 40);
    }

    #[test]
    fn mse_examples() {
        let p = ScoringParams::new(78.0, 0.44, 0.05).unwrap();
        let data = synthetic(&p);
        assert_eq!(mse_objective(&p, &data).unwrap(), 0.0);

        // A mask whose area equals alpha predicts 0.5.
        let mask = rect_mask(10, 2, 2, 5, 5);
        let w = gaussian_weights(10, 10, 0.44).unwrap();
        let g = crate::scoring::weighted_area(&mask, &w).unwrap();
        let half = ScoringParams::new(10.0, 0.44, g).unwrap();
        let one = [ScoredExample::new(mask, 1.0).unwrap()];
        assert!((mse_objective(&half, &one).unwrap() - 0.25).abs() < 1e-15);

        assert!(matches!(mse_objective(&p, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn mse_is_permutation_invariant() {
        let truth = ScoringParams::new(78.0, 0.44, 0.05).unwrap();
        let probe = ScoringParams::new(30.0, 0.3, 0.1).unwrap();
        let mut data = synthetic(&truth);
        let a = mse_objective(&probe, &data).unwrap();
        data.reverse();
        let b = mse_objective(&probe, &data).unwrap();
        assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let cfg = FitConfig::default();
        let one = vec![ScoredExample::new(rect_mask(8, 0, 0, 3, 3), 0.5).unwrap()];
        assert!(matches!(fit_params(&one, &cfg), Err(Error::DegenerateData(_))));
        assert!(matches!(grid_oracle(&one, &cfg), Err(Error::DegenerateData(_))));
        let empties = vec![
            ScoredExample::new(BinaryMask::zeros(4, 4).unwrap(), 0.0).unwrap(),
            ScoredExample::new(BinaryMask::zeros(4, 4).unwrap(), 1.0).unwrap(),
        ];
        assert!(matches!(fit_params(&empties, &cfg), Err(Error::DegenerateData(_))));
        assert!(matches!(fit_params(&[], &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn two_point_grid_picks_better() {
        let truth = ScoringParams::new(50.0, 0.4, 0.1).unwrap();
        let data = synthetic(&truth);
        let cfg = FitConfig {
            lambda: GridAxis::new(50.0, 50.0, 1),
            sigma: GridAxis::new(0.4, 0.4, 1),
            alpha: GridAxis::new(0.1, 0.4, 2),
            ..FitConfig::default()
        };
        let r = grid_oracle(&data, &cfg).unwrap();
        assert_eq!(r.params.alpha, 0.1);
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.evaluations, 2);
    }

    #[test]
    fn grid_containing_truth_is_no_worse() {
        let cfg = FitConfig {
            lambda: GridAxis::new(1.0, 157.0, 3),
            sigma: GridAxis::new(0.05, 0.85, 3),
            alpha: GridAxis::new(0.0, 0.12, 3),
            ..FitConfig::default()
        };
        let truth = ScoringParams::new(
            cfg.lambda.values()[1],
            cfg.sigma.values()[1],
            cfg.alpha.values()[1],
        )
        .unwrap();
        let data = synthetic(&truth);
        let r = grid_oracle(&data, &cfg).unwrap();
        assert_eq!(mse_objective(&truth, &data).unwrap(), 0.0);
        assert!(r.mse <= 0.0);
    }

    #[test]
    fn fit_recovers_predictions() {
        let truth = ScoringParams::new(78.0, 0.44, 0.05).unwrap();
        let data = synthetic(&truth);
        let cfg = small_config();
        let fit = fit_params(&data, &cfg).unwrap();
        let oracle = grid_oracle(&data, &cfg).unwrap();
        assert!(fit.mse <= oracle.mse);
        for ex in &data {
            let got = distraction_score(&ex.label, &fit.params).unwrap();
            assert!((got - ex.human_score).abs() <= 1e-3, "{got} vs {}", ex.human_score);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let truth = ScoringParams::new(20.0, 0.7, 0.2).unwrap();
        let mut data = synthetic(&truth);
        for (k, ex) in data.iter_mut().enumerate() {
            ex.human_score = (ex.human_score + 0.05 * ((k % 5) as f64 - 2.0)).clamp(0.0, 1.0);
        }
        let cfg = small_config();
        let a = fit_params(&data, &cfg).unwrap();
        let b = fit_params(&data, &cfg).unwrap();
        assert_eq!(a.params.lambda.to_bits(), b.params.lambda.to_bits());
        assert_eq!(a.params.sigma.to_bits(), b.params.sigma.to_bits());
        assert_eq!(a.params.alpha.to_bits(), b.params.alpha.to_bits());
        assert_eq!(a.mse.to_bits(), b.mse.to_bits());
        assert_eq!(a.evaluations, b.evaluations);
    }
}
