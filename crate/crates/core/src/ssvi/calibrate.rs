//! Daily calibration of the surface parameterizations to one
//! implied-volatility grid.
//!
//! The objective is a weighted least squares on implied vols,
//! `sum_i sum_k phi_N(k) (sigma_mkt(k,T_i) - sigma_model(k,T_i))^2`, with
//! `phi_N` the standard normal density in log-strike (more weight close to
//! the money). ATM total variances are parameterized through their
//! increments so the calendar monotonicity constraint becomes a bound
//! constraint, and the per-shape wing constraints are enforced by projecting
//! iterates onto the feasible set.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::IvsGrid;
use crate::error::{Error, Result};
use crate::math::{levenberg_marquardt, norm_pdf, Bounds, LmOptions};
use crate::ssvi::black::{bs_call_price, bs_delta};
use crate::ssvi::{total_variance_formula, PhiParam, PssviParams, SsviSurface};

/// Which shape family to calibrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsviVariant {
    HestonLike,
    PowerLaw,
    ModifiedPowerLaw,
}

impl std::str::FromStr for SsviVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heston-like" | "hl" => Ok(SsviVariant::HestonLike),
            "power-law" | "pl" => Ok(SsviVariant::PowerLaw),
            "modified-power-law" | "mpl" => Ok(SsviVariant::ModifiedPowerLaw),
            "parsimonious" => Err(Error::validation(
                "use calibrate_pssvi_daily for the four-parameter surface",
            )),
            other => Err(Error::validation(format!("unknown SSVI variant '{other}'"))),
        }
    }
}

/// Log-strike weighting of the calibration objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Standard normal density in log-strike.
    NormalDensity,
    Uniform,
}

impl Weighting {
    fn weight(&self, k: f64) -> f64 {
        match self {
            Weighting::NormalDensity => norm_pdf(k),
            Weighting::Uniform => 1.0,
        }
    }
}

/// Fit quality of one daily calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DailyFitReport {
    pub date: NaiveDate,
    /// Mean of `|sigma_fit - sigma_mkt| / sigma_mkt` over calibration points.
    pub mean_rel_err: f64,
    /// Mean absolute call-price error in basis points of spot.
    pub mean_price_err_bps: f64,
    /// Relative error per calibration point (same order as the point list).
    pub point_rel_errors: Vec<f64>,
    pub points_used: usize,
    /// Set when the grid cannot identify the smile shape (ATM-only quotes).
    pub degenerate: bool,
}

struct CalPoint {
    k: f64,
    maturity_idx: usize,
    t: f64,
    sigma: f64,
    weight: f64,
}

// Daily fits carry many theta increments; allow a larger iteration budget
// than the generic optimizer default (poorly fitting shapes converge slowly
// against an active wing constraint).
fn daily_lm_options() -> LmOptions {
    LmOptions {
        max_iter: 2000,
        tol: 1e-10,
    }
}

/// Flatten a (moneyness) grid into calibration points, keeping only quotes
/// whose call delta lies in [0.1, 0.9].
fn calibration_points(grid: &IvsGrid, weighting: Weighting) -> Result<(Vec<CalPoint>, Vec<f64>)> {
    let grid = grid.to_moneyness()?;
    let mut points = Vec::new();
    for (i, ((t, axis), vols)) in grid
        .maturities
        .iter()
        .zip(&grid.axis_values)
        .zip(&grid.vols)
        .enumerate()
    {
        for (&m, &sigma) in axis.iter().zip(vols.iter()) {
            let delta = bs_delta(m, *t, sigma, true);
            if !(0.1..=0.9).contains(&delta) {
                continue;
            }
            points.push(CalPoint {
                k: m.ln(),
                maturity_idx: i,
                t: *t,
                sigma,
                weight: weighting.weight(m.ln()),
            });
        }
    }
    if points.is_empty() {
        return Err(Error::validation(format!(
            "grid {} has no quotes with call delta in [0.1, 0.9]",
            grid.date
        )));
    }
    let atm = grid.atm_vols()?;
    let theta_init: Vec<f64> = atm
        .iter()
        .zip(grid.maturities.iter())
        .map(|(v, t)| v * v * t)
        .collect();
    Ok((points, theta_init))
}

fn fit_report(
    date: NaiveDate,
    points: &[CalPoint],
    model_vol: impl Fn(&CalPoint) -> f64,
    degenerate: bool,
) -> DailyFitReport {
    let mut rel = Vec::with_capacity(points.len());
    let mut price_err = 0.0;
    for p in points {
        let fit = model_vol(p);
        rel.push((fit - p.sigma).abs() / p.sigma);
        let m = p.k.exp();
        price_err += (bs_call_price(m, p.t, fit) - bs_call_price(m, p.t, p.sigma)).abs();
    }
    let n = points.len() as f64;
    DailyFitReport {
        date,
        mean_rel_err: rel.iter().sum::<f64>() / n,
        mean_price_err_bps: price_err / n * 1e4,
        point_rel_errors: rel,
        points_used: points.len(),
        degenerate,
    }
}

/// Calibrate one of the quoted-theta surfaces to a daily grid.
///
/// Initial guesses: `theta_i = sigma_atm(T_i)^2 T_i`, `rho = -0.5`,
/// `lambda = 1`, `eta = 1`, `gamma = 0.25`.
pub fn calibrate_ssvi_daily(
    grid: &IvsGrid,
    variant: SsviVariant,
    weighting: Weighting,
) -> Result<(SsviSurface, DailyFitReport)> {
    let (points, theta_init) = calibration_points(grid, weighting)?;
    let n_mat = theta_init.len();
    let n_shape = match variant {
        SsviVariant::HestonLike => 1,
        _ => 2,
    };
    if points.len() < n_mat + 1 + n_shape {
        return Err(Error::validation(format!(
            "grid {} has too few usable quotes ({}) for {} parameters",
            grid.date,
            points.len(),
            n_mat + 1 + n_shape
        )));
    }

    // Parameter vector: [theta increments.., rho, shape..]. For the
    // Heston-like shape the free coordinate is the excess of lambda above
    // its wing floor (1+|rho|)/4, which turns that constraint into a bound.
    let mut x0: Vec<f64> = Vec::with_capacity(n_mat + 1 + n_shape);
    let mut prev = 0.0;
    for &th in &theta_init {
        x0.push((th - prev).max(1e-10));
        prev = th.max(prev);
    }
    x0.push(-0.5);
    match variant {
        SsviVariant::HestonLike => x0.push(1.0 - (1.0 + 0.5) / 4.0),
        _ => {
            x0.push(1.0); // eta
            x0.push(0.25); // gamma
        }
    }

    let mut lo = vec![0.0; n_mat];
    let mut hi = vec![f64::INFINITY; n_mat];
    lo.push(-0.999);
    hi.push(0.999);
    match variant {
        SsviVariant::HestonLike => {
            lo.push(0.0); // lambda excess above the wing floor
            hi.push(f64::INFINITY);
        }
        _ => {
            lo.push(1e-6);
            hi.push(f64::INFINITY);
            lo.push(0.01);
            hi.push(0.99);
        }
    }
    let bounds = Bounds { lo, hi };

    let project = move |x: &mut [f64]| project_shape_constraints(x, n_mat, variant);

    let residuals = |x: &[f64]| ssvi_residuals(x, n_mat, variant, &points);
    let fit = levenberg_marquardt(residuals, &x0, &bounds, Some(&project), &daily_lm_options())?;

    let surface = surface_from_params(&fit.x, n_mat, variant, &grid.maturities)?;
    let report = fit_report(
        grid.date,
        &points,
        |p| model_vol_from_params(&fit.x, n_mat, variant, p),
        false,
    );
    Ok((surface, report))
}

fn thetas_from_increments(x: &[f64], n_mat: usize) -> Vec<f64> {
    let mut thetas = Vec::with_capacity(n_mat);
    let mut acc = 0.0;
    for &inc in &x[..n_mat] {
        acc += inc.max(0.0);
        thetas.push(acc);
    }
    thetas
}

fn shape_phi(x: &[f64], n_mat: usize, variant: SsviVariant) -> PhiParam {
    match variant {
        SsviVariant::HestonLike => PhiParam::HestonLike {
            // Stored coordinate is the excess above the wing floor.
            lambda: (1.0 + x[n_mat].abs()) / 4.0 + x[n_mat + 1].max(0.0),
        },
        SsviVariant::PowerLaw => PhiParam::PowerLaw {
            eta: x[n_mat + 1],
            gamma: x[n_mat + 2],
        },
        SsviVariant::ModifiedPowerLaw => PhiParam::ModifiedPowerLaw {
            eta: x[n_mat + 1],
            gamma: x[n_mat + 2],
        },
    }
}

fn model_vol_from_params(x: &[f64], n_mat: usize, variant: SsviVariant, p: &CalPoint) -> f64 {
    let thetas = thetas_from_increments(x, n_mat);
    let rho = x[n_mat];
    let theta = thetas[p.maturity_idx];
    if theta <= 0.0 {
        return 0.0;
    }
    let phi = crate::ssvi::phi_eval(&shape_phi(x, n_mat, variant), theta).unwrap_or(0.0);
    (total_variance_formula(theta, rho, phi, p.k) / p.t).sqrt()
}

fn ssvi_residuals(x: &[f64], n_mat: usize, variant: SsviVariant, points: &[CalPoint]) -> Vec<f64> {
    points
        .iter()
        .map(|p| {
            let fit = model_vol_from_params(x, n_mat, variant, p);
            p.weight.sqrt() * (fit - p.sigma)
        })
        .collect()
}

/// Project `(rho, shape params)` onto the per-shape wing constraint set.
/// The Heston-like shape needs no projection: its constraint is expressed
/// through the lambda-excess coordinate.
fn project_shape_constraints(x: &mut [f64], n_mat: usize, variant: SsviVariant) {
    let rho_abs = x[n_mat].abs();
    let one_plus = 1.0 + rho_abs;
    match variant {
        SsviVariant::HestonLike => {}
        SsviVariant::PowerLaw => {
            let gamma = x[n_mat + 2];
            if (gamma - 0.5).abs() < 1e-9 {
                let cap = (4.0 / one_plus).sqrt() * (1.0 - 1e-12);
                if x[n_mat + 1] > cap {
                    x[n_mat + 1] = cap;
                }
            }
        }
        SsviVariant::ModifiedPowerLaw => {
            let gamma = x[n_mat + 2];
            let eta = &mut x[n_mat + 1];
            if (gamma - 0.5).abs() < 1e-9 {
                let cap = (4.0 / one_plus).sqrt() * (1.0 - 1e-12);
                if *eta > cap {
                    *eta = cap;
                }
            } else if gamma < 0.5 {
                // Interior peak of theta*phi(theta)^2 at theta = 1 - 2 gamma.
                let pk = 1.0 - 2.0 * gamma;
                let denom = pk.powf(1.0 - 2.0 * gamma) / (1.0 + pk).powf(2.0 - 2.0 * gamma);
                let cap_peak = (4.0 / (denom * one_plus)).sqrt();
                let cap = cap_peak.min(4.0 / one_plus) * (1.0 - 1e-12);
                if *eta > cap {
                    *eta = cap;
                }
            } else {
                let cap = 4.0 / one_plus * (1.0 - 1e-12);
                if *eta > cap {
                    *eta = cap;
                }
            }
        }
    }
}

fn surface_from_params(
    x: &[f64],
    n_mat: usize,
    variant: SsviVariant,
    maturities: &[f64],
) -> Result<SsviSurface> {
    SsviSurface::new(
        maturities.to_vec(),
        thetas_from_increments(x, n_mat),
        x[n_mat],
        shape_phi(x, n_mat, variant),
    )
}

/// Calibrate the four-parameter surface `(a, p, rho, eta)` with the wing
/// constraint `eta^2 (1 + |rho|) <= 4` enforced by projection.
///
/// A grid quoting only at the money cannot identify `(rho, eta)`; in that
/// case `(a, p)` are fitted to the ATM total variances alone and the report
/// is flagged degenerate.
pub fn calibrate_pssvi_daily(grid: &IvsGrid) -> Result<(PssviParams, DailyFitReport)> {
    let (points, theta_init) = calibration_points(grid, Weighting::NormalDensity)?;
    let t1 = grid.maturities[0];
    let a0 = (theta_init[0] / t1).max(1e-8);

    let max_abs_k = points.iter().map(|p| p.k.abs()).fold(0.0f64, f64::max);
    let degenerate = max_abs_k < 1e-8;

    if degenerate {
        // Two-parameter fit of theta_T = a T^p to the ATM variances.
        let thetas = theta_init.clone();
        let mats = grid.maturities.clone();
        let residuals = move |x: &[f64]| -> Vec<f64> {
            mats.iter()
                .zip(thetas.iter())
                .map(|(&t, &th)| x[0] * t.powf(x[1]) - th)
                .collect()
        };
        let bounds = Bounds {
            lo: vec![0.0, 0.0],
            hi: vec![f64::INFINITY, 10.0],
        };
        let fit = levenberg_marquardt(residuals, &[a0, 1.0], &bounds, None, &daily_lm_options())?;
        let params = PssviParams::new(fit.x[0], fit.x[1], -0.5, 1.0)?;
        let report = fit_report(
            grid.date,
            &points,
            |p| (params.a * p.t.powf(params.p) / p.t).sqrt(),
            true,
        );
        return Ok((params, report));
    }

    let x0 = [a0, 1.0, -0.5, 1.0];
    let bounds = Bounds {
        lo: vec![0.0, 0.0, -0.999, 1e-6],
        hi: vec![f64::INFINITY, 10.0, 0.999, f64::INFINITY],
    };
    let project = |x: &mut [f64]| {
        let cap = (4.0 / (1.0 + x[2].abs())).sqrt() * (1.0 - 1e-12);
        if x[3] > cap {
            x[3] = cap;
        }
    };
    let residuals = |x: &[f64]| -> Vec<f64> {
        points
            .iter()
            .map(|p| {
                let theta = x[0] * p.t.powf(x[1]);
                let fit = if theta <= 0.0 {
                    0.0
                } else {
                    let phi = x[3] / (theta * (1.0 + theta)).sqrt();
                    (total_variance_formula(theta, x[2], phi, p.k) / p.t).sqrt()
                };
                p.weight.sqrt() * (fit - p.sigma)
            })
            .collect()
    };
    let fit = levenberg_marquardt(residuals, &x0, &bounds, Some(&project), &daily_lm_options())?;
    let params = PssviParams::new(fit.x[0], fit.x[1], fit.x[2], fit.x[3])?;
    let report = fit_report(
        grid.date,
        &points,
        |p| {
            let theta = params.a * p.t.powf(params.p);
            if theta <= 0.0 {
                0.0
            } else {
                let phi = params.eta / (theta * (1.0 + theta)).sqrt();
                (total_variance_formula(theta, params.rho, phi, p.k) / p.t).sqrt()
            }
        },
        false,
    );
    Ok((params, report))
}
