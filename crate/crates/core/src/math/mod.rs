//! Shared numerical building blocks: normal distribution functions,
//! scalar root finding and bounded optimizers.

pub mod leastsq;
pub mod normal;
pub mod roots;

pub use leastsq::{levenberg_marquardt, nelder_mead, Bounds, FitResult, LmOptions, NelderMeadOptions};
pub use normal::{erf, erfc, norm_cdf, norm_inv, norm_pdf};
pub use roots::{brent, newton_bisect};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ordinary least squares `y ~ X b` via normal equations with a tiny ridge
/// for numerical safety. Columns of `x` are the regressors (including the
/// intercept column if wanted).
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    ridge(x, y, 0.0)
}

/// Ridge regression with penalty `lambda` on all coefficients.
pub fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = x.ncols();
    let mut xtx = x.transpose() * x;
    for i in 0..n {
        xtx[(i, i)] += lambda + 1e-12;
    }
    let xty = x.transpose() * y;
    xtx.clone()
        .cholesky()
        .map(|ch| ch.solve(&xty))
        .or_else(|| xtx.lu().solve(&xty))
        .ok_or_else(|| Error::numerical("singular design matrix in linear regression"))
}

/// Sample Pearson correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::validation(format!(
            "pearson: need two equal series of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::numerical("pearson: constant input series"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Mean of a slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Empirical quantile with the linear-interpolation convention
/// (`h = (n-1)q`, interpolate between floor and ceil order statistics).
/// `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
