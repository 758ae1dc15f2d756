//! Time-shifted power-law (TSPL) kernels and the return-history features
//! built from them.
//!
//! A TSPL kernel weights lagged returns as `K(tau) = Z / (tau + delta)^alpha`
//! on a truncated window of `C` business-day lags, with `Z` chosen so that
//! `sum_{l=0..C} K(l*dt) * dt = 1`. Two features are derived from a return
//! series `r`:
//!
//! ```text
//! trend:      R1_t    = sum_l K(l*dt) r_{t-l}
//! volatility: Sigma_t = sqrt( sum_l K(l*dt) r_{t-l}^2 )
//! ```
//!
//! The feature at index `t` includes the return realized over the step
//! ending at `t` (lag 0), so a volatility formed from these features and
//! applied to the *next* step introduces no look-ahead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{levenberg_marquardt, Bounds, LmOptions};

/// Default business-day step, in years.
pub const DEFAULT_DT: f64 = 1.0 / 252.0;

/// Time-shifted power-law kernel on a truncated lag window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsplKernel {
    /// Decay exponent, >= 0.
    pub alpha: f64,
    /// Time shift in years, >= 0.
    pub delta: f64,
    /// Cut-off lag in business days (window covers lags 0..=cutoff).
    pub cutoff: usize,
    /// Step size in years.
    pub dt: f64,
}

impl TsplKernel {
    pub fn new(alpha: f64, delta: f64, cutoff: usize, dt: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !(delta >= 0.0) {
            return Err(Error::validation(format!(
                "TSPL kernel requires alpha, delta >= 0 (got alpha={alpha}, delta={delta})"
            )));
        }
        if cutoff < 1 {
            return Err(Error::validation("TSPL kernel requires cutoff >= 1"));
        }
        if !(dt > 0.0) {
            return Err(Error::validation("TSPL kernel requires dt > 0"));
        }
        if delta == 0.0 && alpha > 0.0 {
            return Err(Error::validation(
                "TSPL kernel with delta = 0 and alpha > 0 is singular at lag 0",
            ));
        }
        Ok(TsplKernel {
            alpha,
            delta,
            cutoff,
            dt,
        })
    }

    /// Kernel weights at lags `0..=cutoff`, normalized so that
    /// `sum_l w_l * dt = 1`.
    pub fn weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = (0..=self.cutoff)
            .map(|l| {
                let tau = l as f64 * self.dt + self.delta;
                // alpha = 0 gives a flat kernel even when tau = 0 (0^0 = 1).
                if self.alpha == 0.0 {
                    1.0
                } else {
                    tau.powf(-self.alpha)
                }
            })
            .collect();
        let sum: f64 = w.iter().sum();
        let z = 1.0 / (sum * self.dt);
        for v in &mut w {
            *v *= z;
        }
        w
    }

    /// Number of returns needed before a feature can be evaluated.
    pub fn warmup(&self) -> usize {
        self.cutoff + 1
    }
}

fn check_history(returns: &[f64], kernel: &TsplKernel, t: usize) -> Result<()> {
    if t >= returns.len() {
        return Err(Error::validation(format!(
            "feature index {t} out of range for {} returns",
            returns.len()
        )));
    }
    if t < kernel.cutoff {
        return Err(Error::validation(format!(
            "insufficient history at index {t}: kernel needs {} returns of warm-up",
            kernel.warmup()
        )));
    }
    Ok(())
}

/// Trend feature `R1` at return index `t` (the return `r[t]` enters at lag 0).
pub fn trend_feature(returns: &[f64], kernel: &TsplKernel, t: usize) -> Result<f64> {
    check_history(returns, kernel, t)?;
    let w = kernel.weights();
    Ok(dot_window(returns, &w, t, false))
}

/// Volatility feature `Sigma` at return index `t`.
pub fn vol_feature(returns: &[f64], kernel: &TsplKernel, t: usize) -> Result<f64> {
    check_history(returns, kernel, t)?;
    let w = kernel.weights();
    Ok(dot_window(returns, &w, t, true).max(0.0).sqrt())
}

/// Trend feature over a contiguous range `t0..=t1` with one weight pass.
pub fn trend_series(returns: &[f64], kernel: &TsplKernel, t0: usize, t1: usize) -> Result<Vec<f64>> {
    check_history(returns, kernel, t0)?;
    check_history(returns, kernel, t1)?;
    let w = kernel.weights();
    Ok((t0..=t1).map(|t| dot_window(returns, &w, t, false)).collect())
}

/// Volatility feature over a contiguous range `t0..=t1`.
pub fn vol_series(returns: &[f64], kernel: &TsplKernel, t0: usize, t1: usize) -> Result<Vec<f64>> {
    check_history(returns, kernel, t0)?;
    check_history(returns, kernel, t1)?;
    let w = kernel.weights();
    Ok((t0..=t1)
        .map(|t| dot_window(returns, &w, t, true).max(0.0).sqrt())
        .collect())
}

#[inline]
fn dot_window(returns: &[f64], weights: &[f64], t: usize, squared: bool) -> f64 {
    let mut acc = 0.0;
    for (l, &w) in weights.iter().enumerate() {
        let r = returns[t - l];
        acc += w * if squared { r * r } else { r };
    }
    acc
}

/// Exponentially weighted moving average with the span convention
/// `lambda = 2 / (span + 1)` and finite-history weight normalization
/// (each output is a true weighted average of the data seen so far).
pub fn ewma(series: &[f64], span: f64) -> Vec<f64> {
    assert!(span > 0.0, "ewma span must be positive");
    let lambda = 2.0 / (span + 1.0);
    let decay = 1.0 - lambda;
    let mut out = Vec::with_capacity(series.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for &x in series {
        num = decay * num + x;
        den = decay * den + 1.0;
        out.push(num / den);
    }
    out
}

/// One EWMA column per span; `squared` applies the averages to `r^2`.
pub fn ewma_features(returns: &[f64], spans: &[f64], squared: bool) -> Vec<Vec<f64>> {
    let data: Vec<f64> = if squared {
        returns.iter().map(|r| r * r).collect()
    } else {
        returns.to_vec()
    };
    spans.iter().map(|&s| ewma(&data, s)).collect()
}

/// Fit TSPL shape parameters `(alpha, delta)` so that the normalized kernel
/// lag weights match the lag-weight curve of a non-negative mixture of
/// exponential (EWMA) kernels with the given spans.
pub fn fit_tspl_to_exponential_mixture(
    mixture_weights: &[f64],
    spans: &[f64],
    cutoff: usize,
    dt: f64,
) -> Result<(f64, f64)> {
    if mixture_weights.len() != spans.len() || mixture_weights.is_empty() {
        return Err(Error::validation(
            "mixture weights and spans must have equal nonzero length",
        ));
    }
    let curve = mixture_lag_curve(mixture_weights, spans, cutoff)?;
    fit_tspl_to_lag_curve(&curve, dt)
}

/// Lag-weight curve of a mixture of exponential kernels, normalized to sum 1.
/// Each EWMA with span `s` contributes weights proportional to
/// `lambda (1-lambda)^l` with `lambda = 2/(s+1)`.
pub fn mixture_lag_curve(mixture_weights: &[f64], spans: &[f64], cutoff: usize) -> Result<Vec<f64>> {
    let mut curve = vec![0.0; cutoff + 1];
    for (&c, &s) in mixture_weights.iter().zip(spans.iter()) {
        let lambda = 2.0 / (s + 1.0);
        let mut w = lambda;
        for g in curve.iter_mut() {
            *g += c * w;
            w *= 1.0 - lambda;
        }
    }
    let total: f64 = curve.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numerical(
            "mixture lag curve has non-positive mass; cannot fit a TSPL kernel",
        ));
    }
    for g in &mut curve {
        *g /= total;
    }
    Ok(curve)
}

/// Least-squares fit of normalized TSPL lag weights to a normalized target
/// curve (both summing to 1 over lags `0..=C`). Returns `(alpha, delta)`.
pub fn fit_tspl_to_lag_curve(curve: &[f64], dt: f64) -> Result<(f64, f64)> {
    if curve.len() < 2 {
        return Err(Error::validation("lag curve needs at least two points"));
    }
    let cutoff = curve.len() - 1;
    let residuals = |p: &[f64]| -> Vec<f64> {
        let alpha = p[0];
        let delta = p[1];
        let kernel = TsplKernel {
            alpha,
            delta: delta.max(1e-12),
            cutoff,
            dt,
        };
        let w = kernel.weights();
        w.iter()
            .zip(curve.iter())
            .map(|(wi, gi)| wi * dt - gi)
            .collect()
    };
    let bounds = Bounds {
        lo: vec![0.0, 1e-6],
        hi: vec![20.0, 5.0],
    };
    // The objective has shallow valleys in (alpha, delta); a few starts are
    // enough to land in the right one.
    let starts = [
        [0.5, 0.05],
        [1.5, 0.05],
        [3.0, 0.2],
        [0.1, 0.5],
    ];
    let mut best: Option<crate::math::FitResult> = None;
    for s in starts {
        let fit = match levenberg_marquardt(residuals, &s, &bounds, None, &LmOptions::default()) {
            Ok(f) => f,
            Err(Error::Convergence { best, cost, grad_norm, iterations }) => crate::math::FitResult {
                x: best,
                cost,
                grad_norm,
                iterations,
                converged: false,
            },
            Err(e) => return Err(e),
        };
        if best.as_ref().map_or(true, |b| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    let best = best.unwrap();
    Ok((best.x[0], best.x[1]))
}
