//! The joint model: index dynamics with feature-driven spot volatility, the
//! two ATM-curve parameters driven by the same return features with
//! mean-reverting multiplicative residuals, and the two smile-shape
//! parameters as bounded diffusions.
//!
//! ```text
//! dS/S   = mu dt + sigma_t dW^S,   sigma_t = b0 + b1 R1_t + b2 Sigma_t
//! a_t    = |b0a + b1a R1a_t + (b2a + eps^a_t) Sigma_a_t|
//! p_t    = exp(b0p + b1p R1p_t + (b2p + eps^p_t) Sigma_p_t)
//! d eps^i = -kappa_i eps^i dt + gamma_i dW^i          (i = a, p)
//! d rho  = kappa_r (mu_r - rho) dt + gamma_r sqrt((1-rho)(1+rho)) dW^r
//! d eta  = kappa_e (mu_e - eta) dt + gamma_e sqrt(eta(sqrt(2)-eta)) dW^e
//! ```
//!
//! The five Brownian drivers are correlated; their correlation matrix is
//! estimated from the standardized model residuals. Because the simulated
//! `(a, p)` stay non-negative and `(rho, eta)` stay inside their state
//! intervals, every simulated surface satisfies the static-arbitrage bound
//! by construction.

pub mod simulate;

pub use simulate::{
    evaluate_surface, simulate, ArbitrageAudit, EvaluatedGrid, GridAxis, InitialStates,
    PathRecord, SimulationConfig, SimulationMode, SurfacePathSet, SurfaceState,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::IvsPanel;
use crate::error::{Error, Result};
use crate::features::{ewma, trend_series, vol_series, TsplKernel, DEFAULT_DT};
use crate::math::{nelder_mead, Bounds, NelderMeadOptions};
use crate::par;
use crate::pdv::{self, PdvHyperParams, PdvParams};
use crate::processes::{
    jacobi_estimate, jacobi_residuals, ou_mle, ou_residuals, JacobiBounds, JacobiParams, OuParams,
};
use crate::ssvi::{calibrate_pssvi_daily, PssviParams};

/// Spot-volatility floor applied during simulation; hits are counted.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Index drift plus the feature regression driving spot volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetPdvParams {
    /// Annualized drift of `dS/S`.
    pub mu: f64,
    pub pdv: PdvParams,
}

impl AssetPdvParams {
    pub fn warmup(&self) -> usize {
        self.pdv.warmup()
    }

    /// Spot volatility over return rows `t0..=t1` of a simple-return series.
    pub fn sigma_series(&self, simple_returns: &[f64], t0: usize, t1: usize) -> Result<Vec<f64>> {
        self.pdv.predict_series(simple_returns, t0, t1)
    }
}

/// Everything needed to simulate the joint dynamics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "JointModelParamsFile", into = "JointModelParamsFile")]
pub struct JointModelParams {
    pub asset: AssetPdvParams,
    /// Regression for the ATM-level parameter `a`.
    pub a_pdv: PdvParams,
    /// Regression for `ln p` (the ATM term-structure exponent).
    pub p_pdv: PdvParams,
    pub eps_a: OuParams,
    pub eps_p: OuParams,
    pub rho: JacobiParams,
    pub eta: JacobiParams,
    /// Correlation of the drivers, ordered (S, a, p, rho, eta).
    pub correlation: Vec<Vec<f64>>,
}

impl JointModelParams {
    /// Longest feature warm-up across the three regressions (in returns).
    pub fn warmup(&self) -> usize {
        self.asset
            .warmup()
            .max(self.a_pdv.warmup())
            .max(self.p_pdv.warmup())
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let n = self.correlation.len();
        DMatrix::from_fn(n, n, |i, j| self.correlation[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        if self.correlation.len() != 5 || self.correlation.iter().any(|r| r.len() != 5) {
            return Err(Error::validation("correlation matrix must be 5x5"));
        }
        if self.rho.bounds != JacobiBounds::correlation() {
            return Err(Error::validation("rho process must live on [-1, 1]"));
        }
        if self.eta.bounds != JacobiBounds::eta() {
            return Err(Error::validation("eta process must live on [0, sqrt(2)]"));
        }
        Ok(())
    }
}

// --- JSON schema with table-style row names ------------------------------

#[derive(Serialize, Deserialize)]
struct PdvRow {
    alpha1: f64,
    delta1: f64,
    alpha2: f64,
    delta2: f64,
    beta0: f64,
    beta1: f64,
    beta2: f64,
    cutoff_r1: usize,
    cutoff_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu_s: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct OuRow {
    kappa: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct JacobiRow {
    kappa: f64,
    mu: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct JointModelParamsFile {
    s: PdvRow,
    a: PdvRow,
    p: PdvRow,
    eps_a: OuRow,
    eps_p: OuRow,
    rho: JacobiRow,
    eta: JacobiRow,
    correlation: Vec<Vec<f64>>,
}

fn row_from_pdv(p: &PdvParams, mu: Option<f64>) -> PdvRow {
    PdvRow {
        alpha1: p.kernel_trend.alpha,
        delta1: p.kernel_trend.delta,
        alpha2: p.kernel_vol.alpha,
        delta2: p.kernel_vol.delta,
        beta0: p.beta0,
        beta1: p.beta1,
        beta2: p.beta2,
        cutoff_r1: p.kernel_trend.cutoff,
        cutoff_sigma: p.kernel_vol.cutoff as f64,
        mu_s: mu,
    }
}

fn pdv_from_row(r: &PdvRow) -> Result<PdvParams> {
    Ok(PdvParams {
        beta0: r.beta0,
        beta1: r.beta1,
        beta2: r.beta2,
        kernel_trend: TsplKernel::new(r.alpha1, r.delta1, r.cutoff_r1, DEFAULT_DT)?,
        kernel_vol: TsplKernel::new(r.alpha2, r.delta2, r.cutoff_sigma as usize, DEFAULT_DT)?,
    })
}

impl From<JointModelParams> for JointModelParamsFile {
    fn from(p: JointModelParams) -> Self {
        JointModelParamsFile {
            s: row_from_pdv(&p.asset.pdv, Some(p.asset.mu)),
            a: row_from_pdv(&p.a_pdv, None),
            p: row_from_pdv(&p.p_pdv, None),
            eps_a: OuRow {
                kappa: p.eps_a.kappa,
                gamma: p.eps_a.gamma,
            },
            eps_p: OuRow {
                kappa: p.eps_p.kappa,
                gamma: p.eps_p.gamma,
            },
            rho: JacobiRow {
                kappa: p.rho.kappa,
                mu: p.rho.mu,
                gamma: p.rho.gamma,
            },
            eta: JacobiRow {
                kappa: p.eta.kappa,
                mu: p.eta.mu,
                gamma: p.eta.gamma,
            },
            correlation: p.correlation,
        }
    }
}

impl TryFrom<JointModelParamsFile> for JointModelParams {
    type Error = Error;
    fn try_from(f: JointModelParamsFile) -> Result<Self> {
        let mu = f
            .s
            .mu_s
            .ok_or_else(|| Error::validation("asset row must carry mu_s"))?;
        let params = JointModelParams {
            asset: AssetPdvParams {
                mu,
                pdv: pdv_from_row(&f.s)?,
            },
            a_pdv: pdv_from_row(&f.a)?,
            p_pdv: pdv_from_row(&f.p)?,
            eps_a: OuParams::new(f.eps_a.kappa, f.eps_a.gamma)?,
            eps_p: OuParams::new(f.eps_p.kappa, f.eps_p.gamma)?,
            rho: JacobiParams::new(f.rho.kappa, f.rho.mu, f.rho.gamma, JacobiBounds::correlation())?,
            eta: JacobiParams::new(f.eta.kappa, f.eta.mu, f.eta.gamma, JacobiBounds::eta())?,
            correlation: f.correlation,
        };
        params.validate()?;
        Ok(params)
    }
}

// --- Asset likelihood -----------------------------------------------------

/// Gaussian log-likelihood of the observed log-returns under the
/// feature-driven volatility:
/// `r_{k+1} ~ N((mu - sigma_k^2/2) dt, sigma_k^2 dt)`, with `sigma_k`
/// computed from the simple-return history through index `k`.
pub fn asset_loglikelihood(params: &AssetPdvParams, log_returns: &[f64], dt: f64) -> Result<f64> {
    let warm = params.warmup();
    if log_returns.len() < warm + 2 {
        return Err(Error::validation(format!(
            "need at least {} log-returns for warm-up {warm} plus one transition",
            warm + 2
        )));
    }
    let simple: Vec<f64> = log_returns.iter().map(|r| r.exp_m1()).collect();
    let sigmas = params.sigma_series(&simple, warm, log_returns.len() - 2)?;
    if let Some((i, &s)) = sigmas.iter().enumerate().find(|(_, &s)| !(s > 0.0)) {
        return Err(Error::numerical(format!(
            "spot volatility {s:.4e} non-positive at return index {}; likelihood undefined",
            warm + i
        )));
    }
    let mut ll = 0.0;
    for (i, &sigma) in sigmas.iter().enumerate() {
        let k = warm + i;
        let var = sigma * sigma * dt;
        let mean = (params.mu - 0.5 * sigma * sigma) * dt;
        let q = log_returns[k + 1] - mean;
        ll += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - q * q / (2.0 * var);
    }
    Ok(ll)
}

/// Maximum-likelihood fit of the asset dynamics.
///
/// The seven regression parameters are optimized by a bounded simplex
/// search; the drift is concentrated out in closed form at every objective
/// evaluation (the likelihood is quadratic in `mu` given the volatilities).
/// The search starts from a feature-regression fit on a smoothed
/// realized-volatility proxy `sqrt(ewma(r^2)) / sqrt(dt)`.
pub fn fit_asset(
    log_returns: &[f64],
    dt: f64,
    cutoff_trend: usize,
    cutoff_vol: usize,
    init: Option<&AssetPdvParams>,
) -> Result<AssetPdvParams> {
    let warm = cutoff_trend.max(cutoff_vol);
    if log_returns.len() < warm + 50 {
        return Err(Error::validation(format!(
            "need at least {} log-returns, got {}",
            warm + 50,
            log_returns.len()
        )));
    }
    let simple: Vec<f64> = log_returns.iter().map(|r| r.exp_m1()).collect();
    let n = log_returns.len();

    // Rough volatility level for the neutral fallback seed.
    let vol_level = {
        let var = crate::math::variance(&simple[simple.len().saturating_sub(500)..]);
        (var / dt).sqrt().clamp(0.02, 0.9)
    };
    let mut starts: Vec<[f64; 7]> = Vec::new();
    match init {
        Some(p) => starts.push([
            p.pdv.kernel_trend.alpha,
            p.pdv.kernel_trend.delta,
            p.pdv.kernel_vol.alpha,
            p.pdv.kernel_vol.delta,
            p.pdv.beta0,
            p.pdv.beta1,
            p.pdv.beta2,
        ]),
        None => {
            // Proxy target: smoothed annualized realized volatility.
            let sq: Vec<f64> = simple.iter().map(|r| r * r).collect();
            let smoothed = ewma(&sq, 20.0);
            let proxy: Vec<f64> = (warm..n).map(|t| (smoothed[t] / dt).sqrt()).collect();
            let hyper = PdvHyperParams::new(cutoff_trend, cutoff_vol, 0.0)?;
            if let Ok(report) = pdv::calibrate(&proxy, &simple, &hyper, proxy.len()) {
                starts.push([
                    report.params.kernel_trend.alpha,
                    report.params.kernel_trend.delta,
                    report.params.kernel_vol.alpha,
                    report.params.kernel_vol.delta,
                    report.params.beta0,
                    report.params.beta1,
                    report.params.beta2,
                ]);
            }
        }
    }
    // Neutral seed guards against degenerate proxy fits.
    starts.push([1.0, 0.05, 1.0, 0.05, 0.3 * vol_level, 0.0, 0.7]);

    let bounds = Bounds {
        lo: vec![0.0, 1e-8, 0.0, 1e-8, -1.0, -5.0, -5.0],
        hi: vec![20.0, 5.0, 20.0, 5.0, 1.0, 5.0, 5.0],
    };

    let objective = |x: &[f64]| -> f64 {
        match profiled_negative_loglik(x, &simple, log_returns, warm, dt, cutoff_trend, cutoff_vol) {
            Some((nll, _)) => nll,
            None => 1e12,
        }
    };
    let opts = NelderMeadOptions {
        max_iter: 3000,
        tol_f: 1e-9,
        tol_x: 1e-7,
        initial_step: 0.15,
    };
    let mut fit: Option<crate::math::FitResult> = None;
    for x0 in &starts {
        let candidate = match nelder_mead(&objective, x0, &bounds, &opts) {
            Ok(f) => f,
            Err(Error::Convergence { best, cost, .. }) => crate::math::FitResult {
                x: best,
                cost,
                grad_norm: f64::NAN,
                iterations: opts.max_iter,
                converged: false,
            },
            Err(e) => return Err(e),
        };
        if fit.as_ref().map_or(true, |b| candidate.cost < b.cost) {
            fit = Some(candidate);
        }
    }
    let fit = fit.expect("at least one start");

    let (_, mu) =
        profiled_negative_loglik(&fit.x, &simple, log_returns, warm, dt, cutoff_trend, cutoff_vol)
            .ok_or_else(|| Error::numerical("asset fit produced non-positive volatilities"))?;
    Ok(AssetPdvParams {
        mu,
        pdv: PdvParams {
            beta0: fit.x[4],
            beta1: fit.x[5],
            beta2: fit.x[6],
            kernel_trend: TsplKernel::new(fit.x[0], fit.x[1], cutoff_trend, dt)?,
            kernel_vol: TsplKernel::new(fit.x[2], fit.x[3], cutoff_vol, dt)?,
        },
    })
}

/// Negative log-likelihood with the drift concentrated out; returns
/// `(nll, mu_star)` or `None` when a volatility is non-positive.
fn profiled_negative_loglik(
    x: &[f64],
    simple: &[f64],
    log_returns: &[f64],
    warm: usize,
    dt: f64,
    cutoff_trend: usize,
    cutoff_vol: usize,
) -> Option<(f64, f64)> {
    let k1 = TsplKernel::new(x[0], x[1].max(1e-8), cutoff_trend, dt).ok()?;
    let k2 = TsplKernel::new(x[2], x[3].max(1e-8), cutoff_vol, dt).ok()?;
    let n = log_returns.len();
    let r1 = trend_series(simple, &k1, warm, n - 2).ok()?;
    let sg = vol_series(simple, &k2, warm, n - 2).ok()?;

    let mut sigmas = Vec::with_capacity(r1.len());
    for (r, s) in r1.iter().zip(sg.iter()) {
        let sigma = x[4] + x[5] * r + x[6] * s;
        if !(sigma > 0.0) {
            return None;
        }
        sigmas.push(sigma);
    }
    // mu* minimizes sum ((q_k - mu dt)^2 / (2 sigma_k^2 dt)) with
    // q_k = r_{k+1} + sigma_k^2 dt / 2.
    let mut wsum = 0.0;
    let mut wq = 0.0;
    for (i, &sigma) in sigmas.iter().enumerate() {
        let w = 1.0 / (sigma * sigma);
        let q = log_returns[warm + i + 1] + 0.5 * sigma * sigma * dt;
        wsum += w;
        wq += w * q;
    }
    let mu = wq / (wsum * dt);

    let mut nll = 0.0;
    for (i, &sigma) in sigmas.iter().enumerate() {
        let var = sigma * sigma * dt;
        let q = log_returns[warm + i + 1] - (mu - 0.5 * sigma * sigma) * dt;
        nll += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + q * q / (2.0 * var);
    }
    Some((nll, mu))
}

// --- Full historical calibration ------------------------------------------

/// Hyperparameters for the full pipeline fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitJointOptions {
    pub cutoff_sigma_trend: usize,
    pub cutoff_sigma_vol: usize,
    pub hyper_a: PdvHyperParams,
    pub hyper_p: PdvHyperParams,
    /// Daily surface parameters, if already calibrated (aligned with the
    /// panel's train grids); otherwise they are fitted here.
    #[serde(skip)]
    pub daily_params: Option<Vec<PssviParams>>,
}

/// Output of the full pipeline fit.
#[derive(Debug, Clone)]
pub struct JointFit {
    pub params: JointModelParams,
    /// Daily surface parameters for the train dates.
    pub daily: Vec<(chrono::NaiveDate, PssviParams)>,
    /// Entrywise magnitude of the PSD repair applied to the correlation
    /// matrix (0 when the sample matrix was already PSD).
    pub correlation_repair: f64,
    pub a_report: pdv::CalibrationReport,
    pub p_report: pdv::CalibrationReport,
}

/// Calibrate every parameter of the joint model from a filtered panel:
/// asset likelihood fit, daily surface fits, feature regressions for the two
/// ATM-curve parameters, residual-process estimation and the driver
/// correlation matrix.
pub fn fit_joint(panel: &IvsPanel, opts: &FitJointOptions) -> Result<JointFit> {
    let train: Vec<_> = panel
        .grids
        .iter()
        .filter(|g| g.date <= panel.boundary)
        .collect();
    if train.len() < 120 {
        return Err(Error::validation(format!(
            "joint calibration needs at least 120 train dates, got {}",
            train.len()
        )));
    }
    let prices = &panel.prices;
    let dt = prices.dt;
    let log_returns = prices.log_returns();
    let simple = prices.simple_returns();

    // Return index aligned with each train date (the return ending there).
    let ret_idx: Vec<usize> = train
        .iter()
        .map(|g| {
            let pos = prices.position(g.date).expect("panel invariant");
            if pos == 0 {
                Err(Error::validation(format!(
                    "grid date {} has no preceding price for a return",
                    g.date
                )))
            } else {
                Ok(pos - 1)
            }
        })
        .collect::<Result<_>>()?;
    let warm_all = opts
        .cutoff_sigma_trend
        .max(opts.cutoff_sigma_vol)
        .max(opts.hyper_a.warmup())
        .max(opts.hyper_p.warmup());
    if ret_idx[0] < warm_all {
        return Err(Error::validation(format!(
            "first train date needs {warm_all} returns of history, has {}",
            ret_idx[0]
        )));
    }

    // (1) Asset dynamics on the train window.
    let boundary_pos = prices
        .position(panel.boundary)
        .ok_or_else(|| Error::validation("boundary date missing from the price series"))?;
    let fit_stage = |stage: &str, e: Error| Error::numerical(format!("{stage}: {e}"));
    let asset = fit_asset(
        &log_returns[..boundary_pos],
        dt,
        opts.cutoff_sigma_trend,
        opts.cutoff_sigma_vol,
        None,
    )
    .map_err(|e| fit_stage("asset stage", e))?;

    // (2) Daily surface parameters.
    let daily: Vec<PssviParams> = match &opts.daily_params {
        Some(d) => {
            if d.len() != train.len() {
                return Err(Error::validation(format!(
                    "supplied {} daily parameter sets for {} train dates",
                    d.len(),
                    train.len()
                )));
            }
            d.clone()
        }
        None => {
            let fits = par::map_indexed(train.len(), |i| calibrate_pssvi_daily(train[i]));
            fits.into_iter()
                .map(|r| r.map(|(p, _)| p))
                .collect::<Result<_>>()
                .map_err(|e| fit_stage("daily surface stage", e))?
        }
    };

    // (3) Feature regressions for a and ln p.
    let a_series: Vec<f64> = daily.iter().map(|p| p.a).collect();
    let logp_series: Vec<f64> = daily.iter().map(|p| p.p.max(1e-12).ln()).collect();
    let a_report = calibrate_at(&a_series, &ret_idx, &simple, &opts.hyper_a)
        .map_err(|e| fit_stage("a regression stage", e))?;
    let p_report = calibrate_at(&logp_series, &ret_idx, &simple, &opts.hyper_p)
        .map_err(|e| fit_stage("p regression stage", e))?;

    // (4) Multiplicative residuals on the volatility feature.
    let eps_a_series = multiplicative_residuals(&a_series, &ret_idx, &simple, &a_report.params)
        .map_err(|e| fit_stage("a residual stage", e))?;
    let eps_p_series = multiplicative_residuals(&logp_series, &ret_idx, &simple, &p_report.params)
        .map_err(|e| fit_stage("p residual stage", e))?;
    let eps_a = ou_mle(&eps_a_series, dt).map_err(|e| fit_stage("eps_a stage", e))?;
    let eps_p = ou_mle(&eps_p_series, dt).map_err(|e| fit_stage("eps_p stage", e))?;

    // (5) Smile-shape processes.
    let rho_series: Vec<f64> = daily.iter().map(|p| p.rho).collect();
    let eta_series: Vec<f64> = daily.iter().map(|p| p.eta).collect();
    let rho = jacobi_estimate(&rho_series, dt, JacobiBounds::correlation())
        .map_err(|e| fit_stage("rho stage", e))?;
    let eta = jacobi_estimate(&eta_series, dt, JacobiBounds::eta())
        .map_err(|e| fit_stage("eta stage", e))?;

    // (6) Driver correlations from the standardized residuals, aligned on
    // consecutive train dates.
    let asset_innov = asset_innovations(&asset, &simple, &log_returns, &ret_idx, dt)?;
    let nu_a = ou_residuals(&eps_a_series, &eps_a.params, dt)?;
    let nu_p = ou_residuals(&eps_p_series, &eps_p.params, dt)?;
    let z_rho = jacobi_residuals(&rho_series, &rho, dt)?;
    let z_eta = jacobi_residuals(&eta_series, &eta, dt)?;
    let series = [&asset_innov, &nu_a, &nu_p, &z_rho, &z_eta];
    let mut corr = vec![vec![0.0; 5]; 5];
    for i in 0..5 {
        corr[i][i] = 1.0;
        for j in 0..i {
            let c = crate::math::pearson(series[i], series[j])
                .map_err(|e| fit_stage("correlation stage", e))?;
            corr[i][j] = c;
            corr[j][i] = c;
        }
    }
    let sampler = crate::rng::CorrelatedNormals::new(&DMatrix::from_fn(5, 5, |i, j| corr[i][j]))?;
    let repair = sampler.repair_magnitude();

    let params = JointModelParams {
        asset,
        a_pdv: a_report.params.clone(),
        p_pdv: p_report.params.clone(),
        eps_a: eps_a.params,
        eps_p: eps_p.params,
        rho,
        eta,
        correlation: corr,
    };
    params.validate()?;
    Ok(JointFit {
        params,
        daily: train
            .iter()
            .map(|g| g.date)
            .zip(daily.into_iter())
            .collect(),
        correlation_repair: repair,
        a_report,
        p_report,
    })
}

/// Feature regression with explicit return-index alignment (panel dates may
/// have gaps after filtering). Fits on all rows.
pub fn calibrate_at(
    target: &[f64],
    target_return_idx: &[usize],
    simple_returns: &[f64],
    hyper: &PdvHyperParams,
) -> Result<pdv::CalibrationReport> {
    if target.len() != target_return_idx.len() {
        return Err(Error::validation("target and index vectors must align"));
    }
    // Reuse the contiguous calibration through a padded view: build a dense
    // target over the covered index range is wasteful when gaps are rare, so
    // instead thread the gap-aware rows through the generic fitter.
    pdv_fit_rows(target, target_return_idx, simple_returns, hyper)
}

fn pdv_fit_rows(
    target: &[f64],
    idx: &[usize],
    returns: &[f64],
    hyper: &PdvHyperParams,
) -> Result<pdv::CalibrationReport> {
    // Delegate to the pdv module through its row-mapped entry point.
    pdv::calibrate_rows(target, idx, returns, hyper)
}

/// Residuals of the multiplicative-on-volatility-feature form:
/// `eps_t = (y_t - b0 - b1 R1_t - b2 Sigma_t) / Sigma_t`.
pub fn multiplicative_residuals(
    target: &[f64],
    target_return_idx: &[usize],
    simple_returns: &[f64],
    params: &PdvParams,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(target.len());
    for (&y, &t) in target.iter().zip(target_return_idx.iter()) {
        let r1 = crate::features::trend_feature(simple_returns, &params.kernel_trend, t)?;
        let sg = crate::features::vol_feature(simple_returns, &params.kernel_vol, t)?;
        if !(sg > 0.0) {
            return Err(Error::numerical(format!(
                "volatility feature vanished at return index {t}; residual undefined"
            )));
        }
        out.push((y - params.beta0 - params.beta1 * r1 - params.beta2 * sg) / sg);
    }
    Ok(out)
}

/// Standardized asset innovations at the train dates (skipping the first,
/// which has no preceding transition).
fn asset_innovations(
    asset: &AssetPdvParams,
    simple: &[f64],
    log_returns: &[f64],
    ret_idx: &[usize],
    dt: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ret_idx.len() - 1);
    for &t in &ret_idx[1..] {
        // sigma from features through t-1 prices the return ending at t.
        let r1 = crate::features::trend_feature(simple, &asset.pdv.kernel_trend, t - 1)?;
        let sg = crate::features::vol_feature(simple, &asset.pdv.kernel_vol, t - 1)?;
        let sigma = (asset.pdv.beta0 + asset.pdv.beta1 * r1 + asset.pdv.beta2 * sg).max(SIGMA_FLOOR);
        let mean = (asset.mu - 0.5 * sigma * sigma) * dt;
        out.push((log_returns[t] - mean) / (sigma * dt.sqrt()));
    }
    Ok(out)
}
