//! Evaluation battery for simulated surface paths: PCA of implied-vol
//! log-variations, averaged eigenvectors, quantile envelopes, lag
//! correlations with Fisher confidence intervals and joint-density exports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointmodel::SurfacePathSet;
use crate::math::{norm_inv, pearson, quantile_sorted};
use crate::par;
use crate::pdv::PdvParams;

/// Eigen-decomposition of the covariance of daily log-variations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaResult {
    /// Non-negative, descending.
    pub eigenvalues: Vec<f64>,
    /// `eigenvalues / sum(eigenvalues)`.
    pub explained_ratios: Vec<f64>,
    /// Unit eigenvectors on the flattened grid, sign-fixed so the first
    /// nonzero loading is positive.
    pub eigenvectors: Vec<Vec<f64>>,
}

/// PCA of `delta ln(vol)` across grid points.
///
/// `grids` holds one flattened vol grid per date. The covariance matrix of
/// the date-to-date log-variations is eigen-decomposed; when there are fewer
/// variation rows than grid points the decomposition runs on the (smaller)
/// Gram matrix and eigenvectors are mapped back.
pub fn pca_log_variations(grids: &[Vec<f64>]) -> Result<PcaResult> {
    if grids.len() < 2 {
        return Err(Error::validation("PCA needs at least 2 dates"));
    }
    let p = grids[0].len();
    if p == 0 || grids.iter().any(|g| g.len() != p) {
        return Err(Error::validation("grids must share one nonempty shape"));
    }
    if let Some(v) = grids.iter().flatten().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::validation(format!(
            "grid values must be positive and finite for log-variations, got {v}"
        )));
    }
    let n = grids.len() - 1;
    // X: n x p matrix of log-variations, column-centered.
    let mut x = nalgebra::DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = (grids[i + 1][j] / grids[i][j]).ln();
        }
    }
    for j in 0..p {
        let mean = x.column(j).sum() / n as f64;
        for i in 0..n {
            x[(i, j)] -= mean;
        }
    }
    let denom = (n.max(2) - 1) as f64;

    let (mut eigenvalues, mut eigenvectors): (Vec<f64>, Vec<Vec<f64>>) = if p <= n {
        let cov = x.transpose() * &x / denom;
        let eig = nalgebra::SymmetricEigen::new(cov);
        let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let vecs: Vec<Vec<f64>> = (0..p)
            .map(|c| eig.eigenvectors.column(c).iter().copied().collect())
            .collect();
        (vals, vecs)
    } else {
        // Gram trick: X X^T shares the nonzero spectrum of X^T X.
        let gram = &x * x.transpose() / denom;
        let eig = nalgebra::SymmetricEigen::new(gram);
        let mut vals = Vec::with_capacity(n);
        let mut vecs = Vec::with_capacity(n);
        for c in 0..n {
            let lam = eig.eigenvalues[c];
            vals.push(lam);
            let u = eig.eigenvectors.column(c);
            let v = x.transpose() * u;
            let norm = v.norm();
            if norm > 1e-300 {
                vecs.push(v.iter().map(|e| e / norm).collect());
            } else {
                vecs.push(vec![0.0; p]);
            }
        }
        (vals, vecs)
    };

    // Sort descending, clip tiny negative eigenvalues, fix signs.
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    eigenvalues = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    eigenvectors = order.iter().map(|&i| std::mem::take(&mut eigenvectors[i])).collect();
    for v in &mut eigenvectors {
        if let Some(first) = v.iter().find(|e| e.abs() > 1e-12) {
            if *first < 0.0 {
                for e in v.iter_mut() {
                    *e = -*e;
                }
            }
        }
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numerical("PCA: zero total variance in log-variations"));
    }
    let ratios = eigenvalues.iter().map(|l| l / total).collect();
    Ok(PcaResult {
        eigenvalues,
        explained_ratios: ratios,
        eigenvectors,
    })
}

/// Per-path PCA eigenvector of the given rank, sign-aligned and averaged
/// across paths.
///
/// Within each path the component with the largest magnitude is made
/// positive; each path's vector is then aligned by dot product to the first
/// path's before averaging.
pub fn average_eigenvector(per_path_grids: &[Vec<Vec<f64>>], rank: usize) -> Result<Vec<f64>> {
    if per_path_grids.len() < 2 {
        return Err(Error::validation("need at least 2 paths to average"));
    }
    let p = per_path_grids[0]
        .first()
        .map(|g| g.len())
        .ok_or_else(|| Error::validation("empty path"))?;
    if rank >= p {
        return Err(Error::validation(format!(
            "eigenvector rank {rank} exceeds grid size {p}"
        )));
    }
    let vectors: Vec<Result<Vec<f64>>> = par::map_indexed(per_path_grids.len(), |i| {
        let pca = pca_log_variations(&per_path_grids[i])?;
        if rank >= pca.eigenvectors.len() {
            return Err(Error::validation(format!(
                "eigenvector rank {rank} exceeds the {} available components",
                pca.eigenvectors.len()
            )));
        }
        let mut v = pca.eigenvectors[rank].clone();
        align_max_loading(&mut v);
        Ok(v)
    });
    let mut iter = vectors.into_iter();
    let reference = iter.next().unwrap()?;
    let mut acc = reference.clone();
    let mut count = 1.0;
    for v in iter {
        let mut v = v?;
        let dot: f64 = reference.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            for e in v.iter_mut() {
                *e = -*e;
            }
        }
        for (a, b) in acc.iter_mut().zip(v.iter()) {
            *a += b;
        }
        count += 1.0;
    }
    for a in acc.iter_mut() {
        *a /= count;
    }
    Ok(acc)
}

fn align_max_loading(v: &mut [f64]) {
    let max_idx = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    if v[max_idx] < 0.0 {
        for e in v.iter_mut() {
            *e = -*e;
        }
    }
}

/// Quantile envelopes of per-date simulated values with a historical overlay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub quantiles: Vec<f64>,
    /// `values[date][quantile]`.
    pub values: Vec<Vec<f64>>,
    /// For each symmetric band `(q_j, q_{m-1-j})`: fraction of dates where
    /// the overlay leaves the band.
    pub exit_frequency: Vec<f64>,
    pub historical: Vec<f64>,
}

/// Empirical quantiles (linear-interpolation convention) of the simulated
/// values per date, plus exit frequencies of the historical overlay.
pub fn quantile_envelopes(
    per_date_values: &[Vec<f64>],
    quantiles: &[f64],
    historical: &[f64],
) -> Result<EnvelopeResult> {
    if per_date_values.is_empty() || per_date_values.iter().any(|v| v.is_empty()) {
        return Err(Error::validation("envelope needs nonempty per-date value sets"));
    }
    if historical.len() != per_date_values.len() {
        return Err(Error::validation(format!(
            "historical overlay length {} must match {} dates",
            historical.len(),
            per_date_values.len()
        )));
    }
    if quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::validation("quantiles must lie strictly inside (0, 1)"));
    }
    let mut qs = quantiles.to_vec();
    qs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let values: Vec<Vec<f64>> = per_date_values
        .iter()
        .map(|vals| {
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            qs.iter().map(|&q| quantile_sorted(&sorted, q)).collect()
        })
        .collect();

    let m = qs.len();
    let n_dates = per_date_values.len() as f64;
    let mut exit_frequency = Vec::with_capacity(m / 2);
    for j in 0..m / 2 {
        let exits = historical
            .iter()
            .enumerate()
            .filter(|(d, &h)| h < values[*d][j] || h > values[*d][m - 1 - j])
            .count();
        exit_frequency.push(exits as f64 / n_dates);
    }
    Ok(EnvelopeResult {
        quantiles: qs,
        values,
        exit_frequency,
        historical: historical.to_vec(),
    })
}

/// Correlation of `a_t` with `b_{t-lag}` plus a Fisher-transform confidence
/// interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: usize,
    pub correlation: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Lagged Pearson correlations with confidence intervals from
/// `artanh(r) +- z / sqrt(n - 3)` mapped back through `tanh`.
pub fn lag_correlation(
    a: &[f64],
    b: &[f64],
    max_lag: usize,
    confidence: f64,
) -> Result<Vec<LagCorrelation>> {
    if a.len() != b.len() {
        return Err(Error::validation("series must have equal length"));
    }
    if a.len() <= max_lag + 2 {
        return Err(Error::validation(format!(
            "series of length {} too short for lag {max_lag}",
            a.len()
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::validation("confidence must lie in (0, 1)"));
    }
    let z = norm_inv(0.5 + confidence / 2.0);
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let r = pearson(&a[lag..], &b[..b.len() - lag])?;
        let n = (a.len() - lag) as f64;
        let (lo, hi) = if r.abs() >= 1.0 - 1e-15 || n <= 3.0 {
            (r, r) // degenerate interval at a perfect correlation
        } else {
            let fz = r.atanh();
            let half = z / (n - 3.0).sqrt();
            ((fz - half).tanh(), (fz + half).tanh())
        };
        out.push(LagCorrelation {
            lag,
            correlation: r,
            ci_low: lo,
            ci_high: hi,
        });
    }
    Ok(out)
}

/// One point of the joint (feature-prediction, ATM vol) distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRow {
    /// Path index, or `None` for the historical overlay.
    pub path: Option<usize>,
    pub step: usize,
    /// `beta0 + beta1 R1 + beta2 Sigma` from the supplied regression.
    pub predictor: f64,
    pub atm_vol: f64,
}

/// Joint distribution of the feature prediction and the simulated ATM vol
/// at one maturity: one row per (path, step), features computed from each
/// path's own simulated returns.
pub fn export_joint_density_data(
    paths: &SurfacePathSet,
    pdv: &PdvParams,
    maturity: f64,
) -> Result<Vec<DensityRow>> {
    if !(maturity > 0.0) {
        return Err(Error::validation("maturity must be positive"));
    }
    let warm = pdv.warmup();
    if paths.warmup_returns < warm {
        return Err(Error::validation(format!(
            "paths carry {} warm-up returns, regression needs {warm}",
            paths.warmup_returns
        )));
    }
    let mut rows = Vec::with_capacity(paths.n_paths() * (paths.horizon + 1));
    for (pi, path) in paths.paths.iter().enumerate() {
        let simple: Vec<f64> = path.prices.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
        let t0 = paths.warmup_returns - 1;
        let preds = pdv.predict_series(&simple, t0, t0 + paths.horizon)?;
        for (step, &pred) in preds.iter().enumerate() {
            rows.push(DensityRow {
                path: Some(pi),
                step,
                predictor: pred,
                atm_vol: paths.atm_vol(pi, step, maturity),
            });
        }
    }
    Ok(rows)
}

/// Historical overlay rows for the joint-density export.
pub fn historical_density_rows(
    simple_returns: &[f64],
    return_idx: &[usize],
    atm_vols: &[f64],
    pdv: &PdvParams,
) -> Result<Vec<DensityRow>> {
    if return_idx.len() != atm_vols.len() {
        return Err(Error::validation("index and vol series must align"));
    }
    let mut rows = Vec::with_capacity(atm_vols.len());
    for (step, (&t, &vol)) in return_idx.iter().zip(atm_vols.iter()).enumerate() {
        let r1 = crate::features::trend_feature(simple_returns, &pdv.kernel_trend, t)?;
        let sg = crate::features::vol_feature(simple_returns, &pdv.kernel_vol, t)?;
        rows.push(DensityRow {
            path: None,
            step,
            predictor: pdv.beta0 + pdv.beta1 * r1 + pdv.beta2 * sg,
            atm_vol: vol,
        });
    }
    Ok(rows)
}
