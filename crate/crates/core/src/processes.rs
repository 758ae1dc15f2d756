//! Ornstein-Uhlenbeck and Jacobi processes: exact / full-truncation Euler
//! stepping, transition-based estimators and standardized residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centered Ornstein-Uhlenbeck process `dX = -kappa X dt + gamma dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub kappa: f64,
    pub gamma: f64,
}

impl OuParams {
    pub fn new(kappa: f64, gamma: f64) -> Result<Self> {
        if !(kappa > 0.0 && gamma > 0.0) {
            return Err(Error::validation(format!(
                "OU parameters must be positive (kappa={kappa}, gamma={gamma})"
            )));
        }
        Ok(OuParams { kappa, gamma })
    }

    /// Stationary variance `gamma^2 / (2 kappa)`.
    pub fn stationary_variance(&self) -> f64 {
        self.gamma * self.gamma / (2.0 * self.kappa)
    }

    /// Standard deviation of the exact transition over `dt`.
    /// `expm1` keeps the small-kappa (Brownian) limit accurate.
    pub fn transition_std(&self, dt: f64) -> f64 {
        self.gamma * (-(-2.0 * self.kappa * dt).exp_m1() / (2.0 * self.kappa)).sqrt()
    }
}

/// One exact transition: `x e^{-kappa dt} + transition_std * z`.
pub fn ou_step_exact(x: f64, params: &OuParams, dt: f64, z: f64) -> f64 {
    x * (-params.kappa * dt).exp() + params.transition_std(dt) * z
}

/// Estimation output; `boundary` marks an autoregression coefficient pinned
/// at the edge of (0, 1) (e.g. white-noise input).
#[derive(Debug, Clone)]
pub struct OuFit {
    pub params: OuParams,
    /// One-step autoregression coefficient `sum x_{k+1} x_k / sum x_k^2`.
    pub phi_hat: f64,
    pub boundary: bool,
}

/// Exact-transition maximum likelihood for the centered OU process:
/// `kappa = -ln(phi)/dt` with `phi = sum x_{k+1} x_k / sum x_k^2`, and
/// `gamma^2 = 2 kappa / (1 - e^{-2 kappa dt}) * mean((x_{k+1} - phi x_k)^2)`.
pub fn ou_mle(series: &[f64], dt: f64) -> Result<OuFit> {
    if series.len() < 100 {
        return Err(Error::validation(format!(
            "OU estimation needs at least 100 observations, got {}",
            series.len()
        )));
    }
    let n = series.len() - 1;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for k in 0..n {
        sxy += series[k + 1] * series[k];
        sxx += series[k] * series[k];
    }
    if sxx == 0.0 {
        return Err(Error::numerical("OU estimation: constant zero series"));
    }
    let phi_raw = sxy / sxx;
    // Small negative phi is sampling noise around zero memory; clamp it.
    // A coefficient at or beyond one has no mean-reverting reading.
    const MARGIN: f64 = 0.05;
    if phi_raw <= -MARGIN || phi_raw >= 1.0 {
        return Err(Error::numerical(format!(
            "OU estimation: autoregression coefficient {phi_raw:.4} outside (0, 1); series is not mean-reverting"
        )));
    }
    let boundary = phi_raw <= 0.0;
    let phi = phi_raw.clamp(1e-10, 1.0 - 1e-10);
    let kappa = -phi.ln() / dt;

    let mut sse = 0.0;
    for k in 0..n {
        let e = series[k + 1] - phi * series[k];
        sse += e * e;
    }
    let gamma_sq = 2.0 * kappa / -(-2.0 * kappa * dt).exp_m1() * (sse / n as f64);
    if !(gamma_sq > 0.0) {
        return Err(Error::numerical("OU estimation: degenerate innovation variance"));
    }
    Ok(OuFit {
        params: OuParams::new(kappa, gamma_sq.sqrt())?,
        phi_hat: phi_raw,
        boundary,
    })
}

/// Standardized innovations of an OU series under `params`: the exact-step
/// driving draws. Reconstructs `z` such that
/// `x_{k+1} = x_k e^{-kappa dt} + transition_std * z_{k+1}`.
pub fn ou_residuals(series: &[f64], params: &OuParams, dt: f64) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::validation("OU residuals need at least 2 observations"));
    }
    let decay = (-params.kappa * dt).exp();
    let std = params.transition_std(dt);
    if !(std > 0.0) {
        return Err(Error::numerical("OU residuals: zero transition standard deviation"));
    }
    Ok(series
        .windows(2)
        .map(|w| (w[1] - w[0] * decay) / std)
        .collect())
}

/// State bounds of a Jacobi process with diffusion term
/// `gamma sqrt((x - lo)(hi - x)) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiBounds {
    pub lo: f64,
    pub hi: f64,
}

impl JacobiBounds {
    /// Correlation-style state on [-1, 1]: `Q(x) = (1 - x)(1 + x)`.
    pub fn correlation() -> Self {
        JacobiBounds { lo: -1.0, hi: 1.0 }
    }

    /// Wing-amplitude state on [0, sqrt(2)]: `Q(x) = x (sqrt(2) - x)`.
    pub fn eta() -> Self {
        JacobiBounds {
            lo: 0.0,
            hi: std::f64::consts::SQRT_2,
        }
    }

    pub fn q(&self, x: f64) -> f64 {
        (x - self.lo) * (self.hi - x)
    }

    pub fn contains_strictly(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

/// Mean-reverting diffusion confined to `[lo, hi]`:
/// `dX = kappa (mu - X) dt + gamma sqrt(Q(X)) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiParams {
    pub kappa: f64,
    pub mu: f64,
    pub gamma: f64,
    pub bounds: JacobiBounds,
}

impl JacobiParams {
    pub fn new(kappa: f64, mu: f64, gamma: f64, bounds: JacobiBounds) -> Result<Self> {
        if !(kappa > 0.0 && gamma > 0.0) {
            return Err(Error::validation(format!(
                "Jacobi parameters must be positive (kappa={kappa}, gamma={gamma})"
            )));
        }
        if !(mu > bounds.lo && mu < bounds.hi) {
            return Err(Error::validation(format!(
                "Jacobi mean {mu} must lie strictly inside [{}, {}]",
                bounds.lo, bounds.hi
            )));
        }
        Ok(JacobiParams {
            kappa,
            mu,
            gamma,
            bounds,
        })
    }
}

// Offset keeping Q evaluations strictly inside the state interval.
const JACOBI_EDGE: f64 = 1e-12;

/// Full-truncation Euler step: the diffusion coefficient is evaluated at the
/// state clamped inside the interval, and the result is clamped back into
/// `[lo, hi]`.
pub fn jacobi_step_full_truncation(x: f64, params: &JacobiParams, dt: f64, z: f64) -> f64 {
    let b = params.bounds;
    let x_in = x.clamp(b.lo + JACOBI_EDGE, b.hi - JACOBI_EDGE);
    let q = b.q(x_in).max(0.0);
    let next = x + params.kappa * (params.mu - x) * dt + params.gamma * q.sqrt() * dt.sqrt() * z;
    next.clamp(b.lo, b.hi)
}

/// Closed-form transition estimators for the Euler-discretized Jacobi
/// process (Q-weighted sums of increments). `gamma` is reported as the
/// square root of the Q-weighted innovation variance.
pub fn jacobi_estimate(series: &[f64], dt: f64, bounds: JacobiBounds) -> Result<JacobiParams> {
    if series.len() < 100 {
        return Err(Error::validation(format!(
            "Jacobi estimation needs at least 100 observations, got {}",
            series.len()
        )));
    }
    if let Some((i, &x)) = series
        .iter()
        .enumerate()
        .find(|(_, &x)| !bounds.contains_strictly(x))
    {
        return Err(Error::validation(format!(
            "Jacobi estimation: observation {i} ({x}) on or outside the state bounds ({}, {})",
            bounds.lo, bounds.hi
        )));
    }

    let n = series.len() - 1;
    let mut s1 = 0.0; // sum 1/Q
    let mut sx = 0.0; // sum x/Q
    let mut sxx = 0.0; // sum x^2/Q
    let mut sd = 0.0; // sum dx/Q
    let mut sdx = 0.0; // sum dx*x/Q
    for k in 0..n {
        let x = series[k];
        let q = bounds.q(x);
        let dx = series[k + 1] - x;
        s1 += 1.0 / q;
        sx += x / q;
        sxx += x * x / q;
        sd += dx / q;
        sdx += dx * x / q;
    }
    let denom = s1 * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::numerical("Jacobi estimation: degenerate weighted sums"));
    }
    let kappa = (sd * sx - sdx * s1) / denom / dt;
    if !(kappa > 0.0) {
        return Err(Error::numerical(format!(
            "Jacobi estimation: kappa = {kappa:.4e} <= 0; series is not mean-reverting"
        )));
    }
    let mu = (sd + kappa * dt * sx) / (kappa * dt * s1);
    if !(mu > bounds.lo && mu < bounds.hi) {
        return Err(Error::numerical(format!(
            "Jacobi estimation: fitted mean {mu} outside the state bounds ({}, {})",
            bounds.lo, bounds.hi
        )));
    }

    let mut gsq = 0.0;
    for k in 0..n {
        let x = series[k];
        let resid = series[k + 1] - x - kappa * (mu - x) * dt;
        gsq += resid * resid / bounds.q(x);
    }
    gsq /= n as f64 * dt;
    if !(gsq > 0.0) {
        return Err(Error::numerical("Jacobi estimation: zero innovation variance"));
    }
    JacobiParams::new(kappa, mu, gsq.sqrt(), bounds)
}

/// Standardized Euler innovations
/// `(x_{k+1} - x_k - kappa (mu - x_k) dt) / (gamma sqrt(dt Q(x_k)))`.
pub fn jacobi_residuals(series: &[f64], params: &JacobiParams, dt: f64) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::validation("Jacobi residuals need at least 2 observations"));
    }
    let mut out = Vec::with_capacity(series.len() - 1);
    for (k, w) in series.windows(2).enumerate() {
        let q = params.bounds.q(w[0]);
        if !(q > 0.0) {
            return Err(Error::numerical(format!(
                "Jacobi residuals: zero diffusion at step {k} (state {})",
                w[0]
            )));
        }
        let denom = params.gamma * (dt * q).sqrt();
        out.push((w[1] - w[0] - params.kappa * (params.mu - w[0]) * dt) / denom);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_rng, standard_normal};

    const DT: f64 = 1.0 / 252.0;

    #[test]
    fn ou_step_mean_reverts_to_zero() {
        let p = OuParams::new(50.0, 0.1).unwrap();
        let next = ou_step_exact(5.0, &p, 1.0, 0.0);
        assert!(next.abs() < 1e-20);
    }

    #[test]
    fn ou_step_brownian_limit_for_small_kappa() {
        let p = OuParams::new(1e-10, 0.3).unwrap();
        let next = ou_step_exact(1.0, &p, DT, 1.5);
        let brownian = 1.0 + 0.3 * DT.sqrt() * 1.5;
        assert!((next - brownian).abs() < 1e-8);
    }

    #[test]
    fn ou_transition_moments_match_closed_form() {
        let p = OuParams::new(16.3, 0.11).unwrap();
        // Mean: x e^{-kappa dt}; variance: transition_std^2. Verified against
        // direct evaluation of the defining expressions.
        let mean = ou_step_exact(0.7, &p, DT, 0.0);
        assert!((mean - 0.7 * (-16.3 * DT).exp()).abs() < 1e-12);
        let var = p.transition_std(DT).powi(2);
        let direct = 0.11f64.powi(2) * (1.0 - (-2.0 * 16.3 * DT).exp()) / (2.0 * 16.3);
        assert!((var - direct).abs() < 1e-12);
    }

    #[test]
    fn ou_path_stationary_variance() {
        let p = OuParams::new(16.3, 0.11).unwrap();
        let mut rng = path_rng(11, 0);
        let mut x = 0.0;
        let mut acc = 0.0;
        let n = 1_000_000;
        for _ in 0..n {
            x = ou_step_exact(x, &p, DT, standard_normal(&mut rng));
            acc += x * x;
        }
        let got = acc / n as f64;
        let want = p.stationary_variance();
        assert!(
            (got - want).abs() / want < 0.02,
            "sample variance {got}, stationary {want}"
        );
    }

    #[test]
    fn ou_simulate_then_estimate() {
        let truth = OuParams::new(16.3, 0.11).unwrap();
        let mut rng = path_rng(7, 0);
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        let mut x = 0.0;
        for _ in 0..n {
            x = ou_step_exact(x, &truth, DT, standard_normal(&mut rng));
            xs.push(x);
        }
        let fit = ou_mle(&xs, DT).unwrap();
        assert!(
            (fit.params.kappa - truth.kappa).abs() / truth.kappa < 0.10,
            "kappa {}",
            fit.params.kappa
        );
        assert!(
            (fit.params.gamma - truth.gamma).abs() / truth.gamma < 0.02,
            "gamma {}",
            fit.params.gamma
        );
        assert!(!fit.boundary);
    }

    #[test]
    fn ou_white_noise_is_flagged_boundary_or_rejected() {
        let mut rng = path_rng(9, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| standard_normal(&mut rng)).collect();
        match ou_mle(&xs, DT) {
            Ok(fit) => {
                // phi near zero: enormous kappa, flagged when it dips below zero.
                assert!(fit.params.kappa > 100.0);
            }
            Err(Error::Numerical(msg)) => assert!(msg.contains("not mean-reverting")),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn ou_constant_zero_series_rejected() {
        assert!(ou_mle(&vec![0.0; 500], DT).is_err());
    }

    #[test]
    fn ou_residuals_recover_driving_draws() {
        let p = OuParams::new(8.0, 0.5).unwrap();
        let mut rng = path_rng(21, 0);
        let mut xs = vec![0.3];
        let mut zs = Vec::new();
        for _ in 0..500 {
            let z = standard_normal(&mut rng);
            zs.push(z);
            let x = ou_step_exact(*xs.last().unwrap(), &p, DT, z);
            xs.push(x);
        }
        let resid = ou_residuals(&xs, &p, DT).unwrap();
        for (r, z) in resid.iter().zip(zs.iter()) {
            assert!((r - z).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_step_respects_bounds_and_drift() {
        let p = JacobiParams::new(8.86, 0.93, 0.62, JacobiBounds::eta()).unwrap();
        let hi = p.bounds.hi;
        // At the upper boundary with z = 0 the state drifts strictly inward.
        let next = jacobi_step_full_truncation(hi, &p, DT, 0.0);
        assert!(next < hi);
        assert!((next - (hi + 8.86 * (0.93 - hi) * DT)).abs() < 1e-12);
        // Zero diffusion at both boundaries.
        assert_eq!(p.bounds.q(p.bounds.lo), 0.0);
        assert_eq!(p.bounds.q(p.bounds.hi), 0.0);
    }

    #[test]
    fn jacobi_long_run_mean() {
        let p = JacobiParams::new(8.86, 0.93, 0.62, JacobiBounds::eta()).unwrap();
        let mut rng = path_rng(13, 0);
        let mut x = p.mu;
        let mut acc = 0.0;
        let n = 1_000_000;
        for _ in 0..n {
            x = jacobi_step_full_truncation(x, &p, DT, standard_normal(&mut rng));
            acc += x;
        }
        let got = acc / n as f64;
        assert!((got - p.mu).abs() / p.mu < 0.02, "long-run mean {got}");
    }

    #[test]
    fn jacobi_simulate_then_estimate() {
        let truth = JacobiParams::new(12.7, -0.56, 0.31, JacobiBounds::correlation()).unwrap();
        let mut rng = path_rng(5, 0);
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        let mut x = truth.mu;
        for _ in 0..n {
            x = jacobi_step_full_truncation(x, &truth, DT, standard_normal(&mut rng));
            xs.push(x);
        }
        let fit = jacobi_estimate(&xs, DT, JacobiBounds::correlation()).unwrap();
        assert!((fit.kappa - truth.kappa).abs() / truth.kappa < 0.10, "kappa {}", fit.kappa);
        assert!((fit.mu - truth.mu).abs() / truth.mu.abs() < 0.10, "mu {}", fit.mu);
        assert!((fit.gamma - truth.gamma).abs() / truth.gamma < 0.10, "gamma {}", fit.gamma);
    }

    #[test]
    fn jacobi_estimate_rejects_short_and_boundary_series() {
        assert!(jacobi_estimate(&[0.1, 0.2], DT, JacobiBounds::eta()).is_err());
        let mut xs = vec![0.5; 200];
        xs[50] = 0.0; // exactly on the boundary
        assert!(jacobi_estimate(&xs, DT, JacobiBounds::eta()).is_err());
    }

    #[test]
    fn jacobi_residuals_standardize_to_unit_variance() {
        let truth = JacobiParams::new(8.86, 0.93, 0.62, JacobiBounds::eta()).unwrap();
        let mut rng = path_rng(17, 0);
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        let mut x = truth.mu;
        for _ in 0..n {
            x = jacobi_step_full_truncation(x, &truth, DT, standard_normal(&mut rng));
            xs.push(x);
        }
        let resid = jacobi_residuals(&xs, &truth, DT).unwrap();
        let var = crate::math::variance(&resid);
        assert!((0.95..=1.05).contains(&var), "residual variance {var}");
    }

    #[test]
    fn constant_series_at_mean_gives_zero_residuals_then_error() {
        let p = JacobiParams::new(5.0, 0.5, 0.3, JacobiBounds::eta()).unwrap();
        let xs = vec![0.5; 300];
        let resid = jacobi_residuals(&xs, &p, DT).unwrap();
        assert!(resid.iter().all(|r| r.abs() < 1e-15));
        // The estimator on the same degenerate series has no variance signal.
        assert!(jacobi_estimate(&xs, DT, JacobiBounds::eta()).is_err());
    }
}
