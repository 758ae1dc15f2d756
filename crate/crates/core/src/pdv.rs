//! Feature regression of a volatility-like target on return history:
//! `target_t = beta0 + beta1 * R1_t + beta2 * Sigma_t`, with the trend and
//! volatility features built from two TSPL kernels.
//!
//! Calibration runs in three stages:
//!   1. seed the kernel shapes by ridge-regressing the target on four EWMAs
//!      of returns (trend kernel) and the squared target on four EWMAs of
//!      squared returns (volatility kernel), then fitting a TSPL to the
//!      resulting exponential mixtures;
//!   2. seed the betas by ordinary least squares at the stage-1 kernels;
//!   3. jointly refine all seven parameters by bounded least squares, with
//!      an optional L2 penalty `lambda * (a1^2 + d1^2 + a2^2 + d2^2)` on the
//!      kernel shape parameters.
//!
//! Hyperparameters (the two cut-off lags and the penalty) are selected by
//! blocked cross-validation on adjacent folds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    ewma_features, fit_tspl_to_lag_curve, mixture_lag_curve, trend_series, vol_series, TsplKernel,
};
use crate::math::{self, levenberg_marquardt, ols, pearson, ridge, Bounds, LmOptions};
use crate::par;

/// EWMA spans (business days) used to seed the kernel fits.
pub const SEED_SPANS: [f64; 4] = [10.0, 20.0, 120.0, 250.0];

/// Ridge penalty applied to the standardized EWMA regression in stage 1.
const STAGE1_RIDGE: f64 = 1e-4;

/// Lags reported in calibration diagnostics.
pub const DEFAULT_AUTOCORR_LAGS: [usize; 4] = [1, 5, 20, 50];

/// Fitted regression: intercept, feature sensitivities and the two kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdvParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub kernel_trend: TsplKernel,
    pub kernel_vol: TsplKernel,
}

impl PdvParams {
    /// Warm-up length (returns needed before the first prediction).
    pub fn warmup(&self) -> usize {
        self.kernel_trend.cutoff.max(self.kernel_vol.cutoff)
    }

    /// Predictions over return indices `t0..=t1`.
    pub fn predict_series(&self, returns: &[f64], t0: usize, t1: usize) -> Result<Vec<f64>> {
        let r1 = trend_series(returns, &self.kernel_trend, t0, t1)?;
        let sig = vol_series(returns, &self.kernel_vol, t0, t1)?;
        Ok(r1
            .iter()
            .zip(sig.iter())
            .map(|(r, s)| self.beta0 + self.beta1 * r + self.beta2 * s)
            .collect())
    }
}

/// Cut-off lags (business days) and kernel-shape penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdvHyperParams {
    pub cutoff_trend: usize,
    pub cutoff_vol: usize,
    pub lambda: f64,
}

impl PdvHyperParams {
    pub fn new(cutoff_trend: usize, cutoff_vol: usize, lambda: f64) -> Result<Self> {
        if cutoff_trend < 1 || cutoff_vol < 1 {
            return Err(Error::validation("cut-off lags must be >= 1"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::validation("penalty must be >= 0"));
        }
        Ok(PdvHyperParams {
            cutoff_trend,
            cutoff_vol,
            lambda,
        })
    }

    pub fn warmup(&self) -> usize {
        self.cutoff_trend.max(self.cutoff_vol)
    }
}

/// Calibration output and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: PdvParams,
    pub hyper: PdvHyperParams,
    pub train_r2: f64,
    pub test_r2: Option<f64>,
    /// Signed-to-absolute residual ratio on the test rows.
    pub d_ratio_test: Option<f64>,
    /// Train residuals `target - prediction`.
    pub residuals: Vec<f64>,
    /// `(lag, autocorrelation)` of the train residuals.
    pub residual_autocorr: Vec<(usize, f64)>,
    /// Sum of squares at the stage-3 optimum (including the penalty term).
    pub objective: f64,
}

/// Coefficient of determination `1 - SSE/SST`.
pub fn r2_score(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.is_empty() {
        return Err(Error::validation("r2_score needs equal nonzero lengths"));
    }
    let mean = math::mean(observed);
    let sst: f64 = observed.iter().map(|y| (y - mean) * (y - mean)).sum();
    if sst == 0.0 {
        return Err(Error::numerical("r2_score undefined for a constant observed series"));
    }
    let sse: f64 = observed
        .iter()
        .zip(predicted.iter())
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - sse / sst)
}

/// Signed-to-absolute residual ratio `sum(resid) / sum(|resid|)` in [-1, 1].
pub fn d_ratio(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.is_empty() {
        return Err(Error::validation("d_ratio needs equal nonzero lengths"));
    }
    let mut signed = 0.0;
    let mut abs = 0.0;
    for (y, p) in observed.iter().zip(predicted.iter()) {
        let r = y - p;
        signed += r;
        abs += r.abs();
    }
    if abs == 0.0 {
        return Err(Error::numerical("d_ratio undefined when all residuals vanish"));
    }
    Ok(signed / abs)
}

/// Sample Pearson autocorrelation of `series` at each lag.
pub fn residual_autocorrelation(series: &[f64], lags: &[usize]) -> Result<Vec<f64>> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if series.len() <= max_lag + 2 {
        return Err(Error::validation(format!(
            "series of length {} too short for lag {max_lag}",
            series.len()
        )));
    }
    lags.iter()
        .map(|&l| pearson(&series[l..], &series[..series.len() - l]))
        .collect()
}

/// Calibrate on the first `train_len` rows of `target`; remaining rows are
/// scored out of sample. Row `j` of `target` is aligned with return index
/// `warmup + j`, so `returns` must provide `warmup + target.len()` values.
pub fn calibrate(
    target: &[f64],
    returns: &[f64],
    hyper: &PdvHyperParams,
    train_len: usize,
) -> Result<CalibrationReport> {
    let warm = hyper.warmup();
    let idx: Vec<usize> = (0..target.len()).map(|j| warm + j).collect();
    calibrate_rows_with_split(target, &idx, returns, hyper, train_len)
}

/// Calibration with an explicit target-row to return-index mapping (rows
/// need not be contiguous, e.g. after arbitrage filtering removed dates).
/// All rows are used for fitting.
pub fn calibrate_rows(
    target: &[f64],
    target_return_idx: &[usize],
    returns: &[f64],
    hyper: &PdvHyperParams,
) -> Result<CalibrationReport> {
    calibrate_rows_with_split(target, target_return_idx, returns, hyper, target.len())
}

/// Row-mapped calibration fitting the first `train_len` rows and scoring the
/// remainder out of sample.
pub fn calibrate_rows_with_split(
    target: &[f64],
    idx: &[usize],
    returns: &[f64],
    hyper: &PdvHyperParams,
    train_len: usize,
) -> Result<CalibrationReport> {
    if train_len == 0 || train_len > target.len() {
        return Err(Error::validation(format!(
            "train_len {train_len} must be in 1..={}",
            target.len()
        )));
    }
    let fit_rows: Vec<usize> = (0..train_len).collect();
    let (params, objective) = three_stage_fit(target, idx, returns, hyper, &fit_rows)?;

    let all_rows: Vec<usize> = (0..target.len()).collect();
    let (r1, sg) = feature_rows_at(returns, idx, &all_rows, &params.kernel_trend, &params.kernel_vol)?;
    let predictions: Vec<f64> = r1
        .iter()
        .zip(sg.iter())
        .map(|(r, s)| params.beta0 + params.beta1 * r + params.beta2 * s)
        .collect();
    let train_obs = &target[..train_len];
    let train_pred = &predictions[..train_len];
    let train_r2 = r2_score(train_obs, train_pred)?;
    let residuals: Vec<f64> = train_obs
        .iter()
        .zip(train_pred.iter())
        .map(|(y, p)| y - p)
        .collect();

    let (test_r2, d_ratio_test) = if train_len < target.len() {
        let test_obs = &target[train_len..];
        let test_pred = &predictions[train_len..];
        (
            r2_score(test_obs, test_pred).ok(),
            d_ratio(test_obs, test_pred).ok(),
        )
    } else {
        (None, None)
    };

    let lags: Vec<usize> = DEFAULT_AUTOCORR_LAGS
        .iter()
        .copied()
        .filter(|&l| residuals.len() > l + 2)
        .collect();
    let acs = residual_autocorrelation(&residuals, &lags).unwrap_or_default();

    Ok(CalibrationReport {
        params,
        hyper: *hyper,
        train_r2,
        test_r2,
        d_ratio_test,
        residuals,
        residual_autocorr: lags.into_iter().zip(acs).collect(),
        objective,
    })
}

/// Full three-stage fit restricted to the given target rows.
/// `idx[j]` is the return index aligned with target row `j`.
/// Returns the parameters and the final (penalized) objective value.
fn three_stage_fit(
    target: &[f64],
    idx: &[usize],
    returns: &[f64],
    hyper: &PdvHyperParams,
    fit_rows: &[usize],
) -> Result<(PdvParams, f64)> {
    let warm = hyper.warmup();
    if idx.len() != target.len() {
        return Err(Error::validation("target and return-index vectors must align"));
    }
    if let Some(&bad) = idx.iter().find(|&&t| t < warm || t >= returns.len()) {
        return Err(Error::validation(format!(
            "target row at return index {bad} outside the usable range [{warm}, {})",
            returns.len()
        )));
    }
    if fit_rows.len() < 8 {
        return Err(Error::validation(format!(
            "need at least 8 rows to fit 7 parameters, got {}",
            fit_rows.len()
        )));
    }
    let y_fit: Vec<f64> = fit_rows.iter().map(|&j| target[j]).collect();
    if y_fit.iter().all(|&v| v == y_fit[0]) {
        return Err(Error::numerical("constant target series cannot be calibrated"));
    }

    // Stage 1: kernel seeds from EWMA mixtures.
    let (a1, d1) = seed_kernel(&y_fit, returns, idx, fit_rows, hyper.cutoff_trend, false);
    let y_sq: Vec<f64> = y_fit.iter().map(|v| v * v).collect();
    let (a2, d2) = seed_kernel(&y_sq, returns, idx, fit_rows, hyper.cutoff_vol, true);

    // Stage 2/3: betas by OLS at fixed kernels, then a joint bounded
    // least-squares refinement. The objective has spurious local minima at
    // extreme kernel shapes (all weight on lag zero), so the refinement also
    // runs from a neutral kernel seed and keeps the better optimum.
    let dt = crate::features::DEFAULT_DT;
    let sqrt_lambda = hyper.lambda.sqrt();
    let bounds = Bounds {
        lo: vec![0.0, 1e-8, 0.0, 1e-8, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        hi: vec![20.0, 5.0, 20.0, 5.0, f64::INFINITY, f64::INFINITY, f64::INFINITY],
    };
    let residuals_fn = |p: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(fit_rows.len() + 4);
        match kernels_from(p, hyper, dt)
            .and_then(|(k1, k2)| feature_rows_sel(returns, idx, fit_rows, &k1, &k2))
        {
            Ok((r1, sg)) => {
                for (i, &j) in fit_rows.iter().enumerate() {
                    out.push(target[j] - (p[4] + p[5] * r1[i] + p[6] * sg[i]));
                }
            }
            Err(_) => {
                out.extend(std::iter::repeat(1e6).take(fit_rows.len()));
            }
        }
        if sqrt_lambda > 0.0 {
            out.push(sqrt_lambda * p[0]);
            out.push(sqrt_lambda * p[1]);
            out.push(sqrt_lambda * p[2]);
            out.push(sqrt_lambda * p[3]);
        }
        out
    };

    let kernel_seeds = [(a1, d1.max(1e-8), a2, d2.max(1e-8)), (1.0, 0.05, 1.0, 0.05)];
    let mut best: Option<crate::math::FitResult> = None;
    let mut last_err = None;
    for (s_a1, s_d1, s_a2, s_d2) in kernel_seeds {
        let k1 = TsplKernel::new(s_a1, s_d1, hyper.cutoff_trend, dt)?;
        let k2 = TsplKernel::new(s_a2, s_d2, hyper.cutoff_vol, dt)?;
        let betas = betas_ols(&y_fit, returns, idx, fit_rows, &k1, &k2)?;
        let x0 = [s_a1, s_d1, s_a2, s_d2, betas[0], betas[1], betas[2]];
        match levenberg_marquardt(&residuals_fn, &x0, &bounds, None, &LmOptions::default()) {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.cost < b.cost) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let fit = match best {
        Some(f) => f,
        None => return Err(last_err.expect("at least one start attempted")),
    };

    let params = PdvParams {
        beta0: fit.x[4],
        beta1: fit.x[5],
        beta2: fit.x[6],
        kernel_trend: TsplKernel::new(fit.x[0], fit.x[1], hyper.cutoff_trend, dt)?,
        kernel_vol: TsplKernel::new(fit.x[2], fit.x[3], hyper.cutoff_vol, dt)?,
    };
    Ok((params, fit.cost))
}

fn kernels_from(p: &[f64], hyper: &PdvHyperParams, dt: f64) -> Result<(TsplKernel, TsplKernel)> {
    Ok((
        TsplKernel::new(p[0], p[1].max(1e-12), hyper.cutoff_trend, dt)?,
        TsplKernel::new(p[2], p[3].max(1e-12), hyper.cutoff_vol, dt)?,
    ))
}

/// Stage-1 kernel seed: ridge of `y` on four EWMAs of (squared) returns over
/// the fit rows, then a TSPL fit to the implied exponential mixture. Falls
/// back to a mild default shape when the mixture is degenerate.
fn seed_kernel(
    y: &[f64],
    returns: &[f64],
    idx: &[usize],
    fit_rows: &[usize],
    cutoff: usize,
    squared: bool,
) -> (f64, f64) {
    const FALLBACK: (f64, f64) = (1.0, 0.05);
    let cols = ewma_features(returns, &SEED_SPANS, squared);
    let n = fit_rows.len();
    let k = cols.len();

    // Standardize features over the fit rows; keep scales for unwinding.
    let mut means = vec![0.0; k];
    let mut stds = vec![0.0; k];
    let mut design = DMatrix::zeros(n, k + 1);
    for (c, col) in cols.iter().enumerate() {
        let vals: Vec<f64> = fit_rows.iter().map(|&j| col[idx[j]]).collect();
        means[c] = math::mean(&vals);
        let var = math::variance(&vals);
        stds[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        for (i, v) in vals.iter().enumerate() {
            design[(i, c + 1)] = (v - means[c]) / stds[c];
        }
    }
    for i in 0..n {
        design[(i, 0)] = 1.0;
    }
    let yv = DVector::from_vec(y.to_vec());
    let coef = match ridge(&design, &yv, STAGE1_RIDGE) {
        Ok(c) => c,
        Err(_) => return FALLBACK,
    };
    let mixture: Vec<f64> = (0..k).map(|c| coef[c + 1] / stds[c]).collect();
    match mixture_lag_curve(&mixture, &SEED_SPANS, cutoff)
        .and_then(|curve| fit_tspl_to_lag_curve(&curve, crate::features::DEFAULT_DT))
    {
        Ok(seed) => seed,
        Err(_) => FALLBACK,
    }
}

fn betas_ols(
    y: &[f64],
    returns: &[f64],
    idx: &[usize],
    fit_rows: &[usize],
    k1: &TsplKernel,
    k2: &TsplKernel,
) -> Result<[f64; 3]> {
    let (r1, sg) = feature_rows_sel(returns, idx, fit_rows, k1, k2)?;
    let n = fit_rows.len();
    let mut design = DMatrix::zeros(n, 3);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = r1[i];
        design[(i, 2)] = sg[i];
    }
    let coef = ols(&design, &DVector::from_vec(y.to_vec()))?;
    Ok([coef[0], coef[1], coef[2]])
}

/// Both features at the return indices of the selected target rows.
fn feature_rows_sel(
    returns: &[f64],
    idx: &[usize],
    fit_rows: &[usize],
    k1: &TsplKernel,
    k2: &TsplKernel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let w1 = k1.weights();
    let w2 = k2.weights();
    let mut r1 = Vec::with_capacity(fit_rows.len());
    let mut sg = Vec::with_capacity(fit_rows.len());
    for &j in fit_rows {
        let t = idx[j];
        let mut acc1 = 0.0;
        for (l, &w) in w1.iter().enumerate() {
            acc1 += w * returns[t - l];
        }
        let mut acc2 = 0.0;
        for (l, &w) in w2.iter().enumerate() {
            let r = returns[t - l];
            acc2 += w * r * r;
        }
        r1.push(acc1);
        sg.push(acc2.max(0.0).sqrt());
    }
    Ok((r1, sg))
}

/// Both features at every target row.
fn feature_rows_at(
    returns: &[f64],
    idx: &[usize],
    rows: &[usize],
    k1: &TsplKernel,
    k2: &TsplKernel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    feature_rows_sel(returns, idx, rows, k1, k2)
}

/// One scored hyperparameter triple from cross-validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredHyper {
    pub hyper: PdvHyperParams,
    /// Mean out-of-fold R^2 over the folds.
    pub mean_r2: f64,
    /// Mean R^2 averaged with grid neighbors in the trend-cut-off and
    /// penalty directions (volatility cut-off held fixed).
    pub smoothed_r2: f64,
}

/// Blocked cross-validation: the target rows are split into `folds` adjacent
/// blocks; each triple is fitted on all blocks but one and scored on the
/// held-out block. The best triple maximizes the neighborhood-smoothed score.
pub fn blocked_cross_validate(
    target: &[f64],
    returns: &[f64],
    grid: &[PdvHyperParams],
    folds: usize,
) -> Result<(Vec<ScoredHyper>, usize)> {
    let warm_max = grid.iter().map(|h| h.warmup()).max().unwrap_or(0);
    let idx: Vec<usize> = (0..target.len()).map(|j| warm_max + j).collect();
    blocked_cross_validate_rows(target, &idx, returns, grid, folds)
}

/// Cross-validation with an explicit target-row to return-index mapping.
pub fn blocked_cross_validate_rows(
    target: &[f64],
    idx: &[usize],
    returns: &[f64],
    grid: &[PdvHyperParams],
    folds: usize,
) -> Result<(Vec<ScoredHyper>, usize)> {
    if folds < 2 {
        return Err(Error::validation("cross-validation needs at least 2 folds"));
    }
    if grid.is_empty() {
        return Err(Error::validation("empty hyperparameter grid"));
    }
    let n = target.len();
    let fold_size = n / folds;
    if fold_size < 10 {
        return Err(Error::validation(format!(
            "folds of {fold_size} rows are too short to fit 7 parameters"
        )));
    }
    // Adjacent equal folds; the last fold absorbs the remainder.
    let fold_of = |row: usize| (row / fold_size).min(folds - 1);

    let scores: Vec<Result<f64>> = par::map_indexed(grid.len() * folds, |cell| {
        let g = cell / folds;
        let fold = cell % folds;
        let hyper = &grid[g];
        let fit_rows: Vec<usize> = (0..n).filter(|&r| fold_of(r) != fold).collect();
        let held_out: Vec<usize> = (0..n).filter(|&r| fold_of(r) == fold).collect();
        let (params, _) = three_stage_fit(target, idx, returns, hyper, &fit_rows)?;
        let obs: Vec<f64> = held_out.iter().map(|&r| target[r]).collect();
        let (r1, sg) =
            feature_rows_sel(returns, idx, &held_out, &params.kernel_trend, &params.kernel_vol)?;
        let pred: Vec<f64> = r1
            .iter()
            .zip(sg.iter())
            .map(|(r, s)| params.beta0 + params.beta1 * r + params.beta2 * s)
            .collect();
        r2_score(&obs, &pred)
    });

    let mut mean_r2 = vec![0.0f64; grid.len()];
    for (cell, score) in scores.into_iter().enumerate() {
        mean_r2[cell / folds] += score? / folds as f64;
    }

    // Neighborhood smoothing: average each triple's score with the scores of
    // the closest grid neighbors above and below in the trend-cut-off and
    // penalty directions, holding the volatility cut-off fixed.
    let smoothed: Vec<f64> = (0..grid.len())
        .map(|i| {
            let gi = &grid[i];
            let mut acc = mean_r2[i];
            let mut count = 1.0;
            let mut nearest = |pred: &dyn Fn(&PdvHyperParams) -> bool,
                               dist: &dyn Fn(&PdvHyperParams) -> f64| {
                let mut best: Option<(f64, usize)> = None;
                for (j, gj) in grid.iter().enumerate() {
                    if j == i || gj.cutoff_vol != gi.cutoff_vol || !pred(gj) {
                        continue;
                    }
                    let d = dist(gj);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, j));
                    }
                }
                if let Some((_, j)) = best {
                    acc += mean_r2[j];
                    count += 1.0;
                }
            };
            // Trend cut-off neighbors at identical penalty.
            nearest(
                &|g| g.lambda == gi.lambda && g.cutoff_trend > gi.cutoff_trend,
                &|g| g.cutoff_trend as f64 - gi.cutoff_trend as f64,
            );
            nearest(
                &|g| g.lambda == gi.lambda && g.cutoff_trend < gi.cutoff_trend,
                &|g| gi.cutoff_trend as f64 - g.cutoff_trend as f64,
            );
            // Penalty neighbors at identical trend cut-off.
            nearest(
                &|g| g.cutoff_trend == gi.cutoff_trend && g.lambda > gi.lambda,
                &|g| g.lambda - gi.lambda,
            );
            nearest(
                &|g| g.cutoff_trend == gi.cutoff_trend && g.lambda < gi.lambda,
                &|g| gi.lambda - g.lambda,
            );
            acc / count
        })
        .collect();

    let best = smoothed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap();

    let out = grid
        .iter()
        .zip(mean_r2.iter().zip(smoothed.iter()))
        .map(|(h, (&m, &s))| ScoredHyper {
            hyper: *h,
            mean_r2: m,
            smoothed_r2: s,
        })
        .collect();
    Ok((out, best))
}
