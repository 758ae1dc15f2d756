//! Implementations of the CLI subcommands. All artifacts are CSV or JSON;
//! floats are written with shortest-round-trip formatting so reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use ivsim::data::{
    filter_calendar_arbitrage, load_ivs_csv, load_price_csv, save_ivs_csv, save_price_csv,
    AxisKind, IvsPanel,
};
use ivsim::error::{Error, Result};
use ivsim::features::DEFAULT_DT;
use ivsim::jointmodel::{
    evaluate_surface, simulate, FitJointOptions, GridAxis, InitialStates, JointModelParams,
    PathRecord, SimulationConfig, SimulationMode, SurfacePathSet, SurfaceState,
};
use ivsim::pdv::{self, PdvHyperParams, PdvParams};
use ivsim::ssvi::{
    calibrate_pssvi_daily, calibrate_ssvi_daily, SsviVariant, VarianceSurface, Weighting,
};
use ivsim::{par, validation};

use crate::config::RunConfig;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn load_panel(cfg: &RunConfig) -> Result<IvsPanel> {
    let prices = load_price_csv(cfg.require_prices()?)?;
    let axis: AxisKind = cfg.axis.parse()?;
    let grids = load_ivs_csv(cfg.require_ivs()?, axis)?;
    let boundary = match &cfg.boundary {
        Some(_) => cfg.require_boundary()?,
        None => grids.last().expect("nonempty grids").date,
    };
    IvsPanel::new(grids, prices, boundary)
}

#[derive(Serialize)]
struct IngestReport {
    dates_in: usize,
    dates_kept: usize,
    removed: usize,
    boundary: NaiveDate,
    train_dates: usize,
    test_dates: usize,
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let dates_in = panel.grids.len();
    let (filtered, removed) = filter_calendar_arbitrage(&panel)?;
    let boundary = cfg.require_boundary()?;
    let (train, test) = filtered.split(boundary)?;

    let panel_dir = cfg.out.join("panel");
    std::fs::create_dir_all(&panel_dir)?;
    save_price_csv(&filtered.prices, panel_dir.join("prices.csv"))?;
    save_ivs_csv(&filtered.grids, panel_dir.join("ivs.csv"))?;

    let mut removed_csv = String::from("date,maturity_low_months,maturity_high_months\n");
    for r in &removed {
        let _ = writeln!(
            removed_csv,
            "{},{},{}",
            r.date,
            (r.maturity_low * 12.0).round() as u32,
            (r.maturity_high * 12.0).round() as u32
        );
    }
    write_text(&cfg.out.join("removed_dates.csv"), &removed_csv)?;

    let report = IngestReport {
        dates_in,
        dates_kept: filtered.grids.len(),
        removed: removed.len(),
        boundary,
        train_dates: train.grids.len(),
        test_dates: test.map(|t| t.grids.len()).unwrap_or(0),
    };
    write_text(
        &cfg.out.join("ingest_report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "ingest: kept {}/{} dates ({} removed by the calendar filter)",
        report.dates_kept, report.dates_in, report.removed
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HyperFile {
    cutoff_trend: usize,
    cutoff_vol: usize,
    lambda: f64,
}

impl From<HyperFile> for PdvHyperParams {
    fn from(h: HyperFile) -> Self {
        PdvHyperParams::new(h.cutoff_trend, h.cutoff_vol, h.lambda)
            .expect("validated by caller")
    }
}

fn load_hyper(path: &Path) -> Result<PdvHyperParams> {
    let text = std::fs::read_to_string(path)?;
    let h: HyperFile = serde_json::from_str(&text)?;
    PdvHyperParams::new(h.cutoff_trend, h.cutoff_vol, h.lambda)
}

fn load_grid(path: &Path) -> Result<Vec<PdvHyperParams>> {
    let text = std::fs::read_to_string(path)?;
    let hs: Vec<HyperFile> = serde_json::from_str(&text)?;
    hs.into_iter()
        .map(|h| PdvHyperParams::new(h.cutoff_trend, h.cutoff_vol, h.lambda))
        .collect()
}

/// ATM target series per maturity plus the aligned return indices.
fn atm_targets(panel: &IvsPanel) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    let ret_idx: Vec<usize> = panel
        .grids
        .iter()
        .map(|g| {
            let pos = panel.prices.position(g.date).expect("panel invariant");
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
    let n_mat = panel.grids[0].maturities.len();
    let mut targets = vec![Vec::with_capacity(panel.grids.len()); n_mat];
    for grid in &panel.grids {
        let atm = grid.to_moneyness()?.atm_vols()?;
        for (m, &v) in atm.iter().enumerate() {
            targets[m].push(v);
        }
    }
    let train_len = panel
        .grids
        .iter()
        .filter(|g| g.date <= panel.boundary)
        .count();
    Ok((targets, ret_idx, train_len))
}

pub fn cmd_calibrate_pdv(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let (panel, _) = filter_calendar_arbitrage(&panel)?;
    let (targets, ret_idx, train_len) = atm_targets(&panel)?;
    let simple = panel.prices.simple_returns();
    let months = &cfg.maturities_months;

    let default_hyper = PdvHyperParams::new(250, 1000, 1e-3)?;
    let hyper = match &cfg.hyper {
        Some(path) => load_hyper(path)?,
        None => default_hyper,
    };
    let grid = match &cfg.grid {
        Some(path) => Some(load_grid(path)?),
        None => None,
    };

    let n_mat = targets.len();
    let reports_dir = cfg.out.join("reports");
    std::fs::create_dir_all(&reports_dir)?;

    // Cross-validate (when a grid is supplied) and calibrate per maturity.
    let results: Vec<Result<(pdv::CalibrationReport, Option<Vec<pdv::ScoredHyper>>)>> =
        par::map_indexed(n_mat, |m| {
            let target = &targets[m];
            let train_target = &target[..train_len];
            let train_idx = &ret_idx[..train_len];
            let (chosen, scored) = match &grid {
                Some(g) => {
                    let (scored, best) = pdv::blocked_cross_validate_rows(
                        train_target,
                        train_idx,
                        &simple,
                        g,
                        10,
                    )?;
                    (scored[best].hyper, Some(scored))
                }
                None => (hyper, None),
            };
            // Full-period report: fit on train rows, score the rest.
            let report =
                pdv::calibrate_rows_with_split(target, &ret_idx, &simple, &chosen, train_len)?;
            Ok((report, scored))
        });

    let mut scores_csv = String::from("maturity_months,train_r2,test_r2,d_ratio\n");
    let mut params_csv = String::from(
        "maturity_months,alpha1,delta1,alpha2,delta2,beta0,beta1,beta2,cutoff_r1,cutoff_sigma,lambda\n",
    );
    let mut cv_csv = String::from("maturity_months,cutoff_r1,cutoff_sigma,lambda,mean_r2,smoothed_r2\n");
    let mut any_cv = false;
    for (m, out) in results.into_iter().enumerate() {
        let (mut report, scored) = out?;
        let label = months.get(m).copied().unwrap_or((m + 1) as u32);
        let _ = writeln!(
            scores_csv,
            "{label},{},{},{}",
            report.train_r2,
            report.test_r2.map(|v| v.to_string()).unwrap_or_default(),
            report.d_ratio_test.map(|v| v.to_string()).unwrap_or_default()
        );
        let p = &report.params;
        let _ = writeln!(
            params_csv,
            "{label},{},{},{},{},{},{},{},{},{},{}",
            p.kernel_trend.alpha,
            p.kernel_trend.delta,
            p.kernel_vol.alpha,
            p.kernel_vol.delta,
            p.beta0,
            p.beta1,
            p.beta2,
            report.hyper.cutoff_trend,
            report.hyper.cutoff_vol,
            report.hyper.lambda
        );
        if let Some(scored) = scored {
            any_cv = true;
            for s in scored {
                let _ = writeln!(
                    cv_csv,
                    "{label},{},{},{},{},{}",
                    s.hyper.cutoff_trend, s.hyper.cutoff_vol, s.hyper.lambda, s.mean_r2, s.smoothed_r2
                );
            }
        }
        if !cfg.residuals {
            report.residuals.clear();
        }
        write_text(
            &reports_dir.join(format!("pdv_{label:02}m.json")),
            &serde_json::to_string_pretty(&report)?,
        )?;
    }
    write_text(&cfg.out.join("scores.csv"), &scores_csv)?;
    write_text(&cfg.out.join("pdv_params.csv"), &params_csv)?;
    if any_cv {
        write_text(&cfg.out.join("cv_scores.csv"), &cv_csv)?;
    }
    println!("calibrate-pdv: {n_mat} maturities calibrated");
    Ok(())
}

pub fn cmd_fit_ssvi(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let (panel, removed) = filter_calendar_arbitrage(&panel)?;
    let n = panel.grids.len();

    if cfg.variant == "parsimonious" {
        let fits: Vec<Result<_>> = par::map_indexed(n, |i| calibrate_pssvi_daily(&panel.grids[i]));
        let mut csv = String::from(
            "date,a,p,rho,eta,mean_rel_err,mean_price_err_bps,points,degenerate\n",
        );
        for (grid, fit) in panel.grids.iter().zip(fits) {
            let (params, report) = fit?;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                grid.date,
                params.a,
                params.p,
                params.rho,
                params.eta,
                report.mean_rel_err,
                report.mean_price_err_bps,
                report.points_used,
                report.degenerate
            );
        }
        write_text(&cfg.out.join("daily_fits.csv"), &csv)?;
    } else {
        let variant: SsviVariant = cfg.variant.parse()?;
        let fits: Vec<Result<_>> = par::map_indexed(n, |i| {
            calibrate_ssvi_daily(&panel.grids[i], variant, Weighting::NormalDensity)
        });
        let mut params_csv = String::from("date,param,value\n");
        let mut err_csv = String::from("date,mean_rel_err,mean_price_err_bps,points\n");
        for (grid, fit) in panel.grids.iter().zip(fits) {
            let (surface, report) = fit?;
            let _ = writeln!(params_csv, "{},rho,{}", grid.date, surface.rho);
            match &surface.phi {
                ivsim::ssvi::PhiParam::HestonLike { lambda } => {
                    let _ = writeln!(params_csv, "{},lambda,{lambda}", grid.date);
                }
                ivsim::ssvi::PhiParam::PowerLaw { eta, gamma }
                | ivsim::ssvi::PhiParam::ModifiedPowerLaw { eta, gamma } => {
                    let _ = writeln!(params_csv, "{},eta,{eta}", grid.date);
                    let _ = writeln!(params_csv, "{},gamma,{gamma}", grid.date);
                }
            }
            for (t, theta) in surface.maturities.iter().zip(surface.thetas.iter()) {
                let _ = writeln!(
                    params_csv,
                    "{},theta_{:02}m,{theta}",
                    grid.date,
                    (t * 12.0).round() as u32
                );
            }
            let _ = writeln!(
                err_csv,
                "{},{},{},{}",
                grid.date, report.mean_rel_err, report.mean_price_err_bps, report.points_used
            );
        }
        write_text(&cfg.out.join("daily_params.csv"), &params_csv)?;
        write_text(&cfg.out.join("daily_errors.csv"), &err_csv)?;
    }
    println!(
        "fit-ssvi: {} dates fitted ({} removed by the calendar filter)",
        n,
        removed.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointHyperFile {
    sigma: HyperFile,
    a: HyperFile,
    p: HyperFile,
}

pub fn cmd_fit_joint(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let (panel, _) = filter_calendar_arbitrage(&panel)?;

    let hyper: JointHyperFile = match &cfg.hyper {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => JointHyperFile {
            sigma: HyperFile { cutoff_trend: 250, cutoff_vol: 1000, lambda: 0.0 },
            a: HyperFile { cutoff_trend: 1500, cutoff_vol: 1000, lambda: 1e-4 },
            p: HyperFile { cutoff_trend: 50, cutoff_vol: 100, lambda: 1e-1 },
        },
    };
    let opts = FitJointOptions {
        cutoff_sigma_trend: hyper.sigma.cutoff_trend,
        cutoff_sigma_vol: hyper.sigma.cutoff_vol,
        hyper_a: PdvHyperParams::new(hyper.a.cutoff_trend, hyper.a.cutoff_vol, hyper.a.lambda)?,
        hyper_p: PdvHyperParams::new(hyper.p.cutoff_trend, hyper.p.cutoff_vol, hyper.p.lambda)?,
        daily_params: None,
    };
    let fit = ivsim::jointmodel::fit_joint(&panel, &opts)?;

    write_text(
        &cfg.out.join("joint_params.json"),
        &serde_json::to_string_pretty(&fit.params)?,
    )?;
    let mut daily_csv = String::from("date,a,p,rho,eta\n");
    for (date, p) in &fit.daily {
        let _ = writeln!(daily_csv, "{date},{},{},{},{}", p.a, p.p, p.rho, p.eta);
    }
    write_text(&cfg.out.join("daily_pssvi.csv"), &daily_csv)?;
    let diag = serde_json::json!({
        "a_train_r2": fit.a_report.train_r2,
        "p_train_r2": fit.p_report.train_r2,
        "correlation_repair": fit.correlation_repair,
        "train_dates": fit.daily.len(),
    });
    write_text(&cfg.out.join("fit_report.json"), &serde_json::to_string_pretty(&diag)?)?;
    println!(
        "fit-joint: {} train dates; a R2 {:.3}, p R2 {:.3}",
        fit.daily.len(),
        fit.a_report.train_r2,
        fit.p_report.train_r2
    );
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let params_path = cfg
        .params
        .as_deref()
        .ok_or_else(|| Error::validation("--params is required for simulate"))?;
    let params: JointModelParams =
        serde_json::from_str(&std::fs::read_to_string(params_path)?)?;
    let seed = cfg
        .seed
        .ok_or_else(|| Error::validation("--seed is required for simulate (reproducibility)"))?;
    let mode: SimulationMode = cfg.mode.parse()?;
    let prices = load_price_csv(cfg.require_prices()?)?;
    let horizon = cfg.horizon_days;
    let total_returns = prices.len() - 1;

    let warmup_returns = match mode {
        SimulationMode::Unconditional => cfg.warmup_returns.unwrap_or(total_returns),
        SimulationMode::Conditional => {
            if total_returns <= horizon {
                return Err(Error::validation(format!(
                    "conditional mode needs more than {horizon} returns of history, got {total_returns}"
                )));
            }
            total_returns - horizon
        }
    };
    let needed = match mode {
        SimulationMode::Unconditional => warmup_returns + 1,
        SimulationMode::Conditional => warmup_returns + horizon + 1,
    };
    if prices.len() < needed {
        return Err(Error::validation(format!(
            "price history too short: need {needed} prices, got {}",
            prices.len()
        )));
    }
    let start = prices.len() - needed;
    let config = SimulationConfig {
        n_paths: cfg.paths,
        horizon,
        dt: DEFAULT_DT,
        seed,
        mode,
        prices: prices.closes[start..].to_vec(),
        warmup_returns,
        init: InitialStates::default(),
    };
    let out = simulate(&params, &config)?;

    // Calendar dates per simulation step: historical dates where available,
    // extended over week days beyond the end of the input series.
    let step_dates = simulation_dates(&prices, start + warmup_returns, horizon);

    // Shared warm-up history (identical across paths) for downstream
    // feature-based diagnostics.
    let mut warm_csv = String::from("index,price\n");
    for (i, p) in config.prices[..=warmup_returns].iter().enumerate() {
        let _ = writeln!(warm_csv, "{i},{p}");
    }
    write_text(&cfg.out.join("warmup.csv"), &warm_csv)?;

    let mut paths_csv = String::from("path,step,date,price,sigma,a,p,rho,eta,eps_a,eps_p\n");
    for (pi, path) in out.paths.iter().enumerate() {
        for (step, s) in path.states.iter().enumerate() {
            let price = path.prices[warmup_returns + step];
            let _ = writeln!(
                paths_csv,
                "{pi},{step},{},{price},{},{},{},{},{},{},{}",
                step_dates[step], s.sigma, s.a, s.p, s.rho, s.eta, s.eps_a, s.eps_p
            );
        }
    }
    write_text(&cfg.out.join("paths.csv"), &paths_csv)?;

    if cfg.ivs_paths > 0 {
        let maturities = cfg.maturities_years();
        let axis: AxisKind = cfg.axis.parse()?;
        let mut ivs_csv = String::from("path,date,maturity_months,axis_value,vol\n");
        let mut failures = 0usize;
        for (pi, path) in out.paths.iter().take(cfg.ivs_paths).enumerate() {
            for (step, s) in path.states.iter().enumerate().step_by(cfg.ivs_stride) {
                let grid = match axis {
                    AxisKind::Moneyness => {
                        evaluate_surface(s, &maturities, &GridAxis::Moneyness(&cfg.moneyness))?
                    }
                    AxisKind::BsDelta => {
                        evaluate_surface(s, &maturities, &GridAxis::Delta(&cfg.deltas))?
                    }
                };
                failures += grid.newton_failures;
                for (mi, months) in cfg.maturities_months.iter().enumerate() {
                    let axis_vals: &[f64] = match axis {
                        AxisKind::Moneyness => &cfg.moneyness,
                        AxisKind::BsDelta => &cfg.deltas,
                    };
                    for (ai, &av) in axis_vals.iter().enumerate() {
                        let _ = writeln!(
                            ivs_csv,
                            "{pi},{},{months},{av},{}",
                            step_dates[step], grid.vols[mi][ai]
                        );
                    }
                }
            }
        }
        write_text(&cfg.out.join("ivs.csv"), &ivs_csv)?;
        if failures > 0 {
            eprintln!("warning: {failures} delta inversions failed (NaN cells in ivs.csv)");
        }
    }

    let audit = out.audit_arbitrage();
    let floor_fraction = out.sigma_floor_events as f64 / out.total_steps().max(1) as f64;
    // audit.json holds only run-deterministic facts; wall time goes to a
    // separate file so reruns stay byte-identical.
    let report = serde_json::json!({
        "paths": out.n_paths(),
        "horizon": out.horizon,
        "seed": out.seed,
        "mode": cfg.mode,
        "checked_states": audit.checked_states,
        "arbitrage_violations": audit.violations,
        "sigma_floor_events": out.sigma_floor_events,
        "sigma_floor_fraction": floor_fraction,
        "abs_clamp_events": out.abs_clamp_events,
        "correlation_repair": out.correlation_repair,
    });
    write_text(&cfg.out.join("audit.json"), &serde_json::to_string_pretty(&report)?)?;
    let timing = serde_json::json!({ "elapsed_seconds": started.elapsed().as_secs_f64() });
    write_text(&cfg.out.join("timing.json"), &serde_json::to_string_pretty(&timing)?)?;
    println!(
        "simulate: {} paths x {} steps in {:.1}s; arbitrage violations: {}",
        out.n_paths(),
        out.horizon,
        started.elapsed().as_secs_f64(),
        audit.violations
    );
    Ok(())
}

/// Calendar dates for simulation steps `0..=horizon`, anchored at price
/// index `anchor`. Dates beyond the series end continue over week days.
fn simulation_dates(
    prices: &ivsim::data::PriceSeries,
    anchor: usize,
    horizon: usize,
) -> Vec<NaiveDate> {
    let mut dates = Vec::with_capacity(horizon + 1);
    let mut last = prices.dates[anchor.min(prices.len() - 1)];
    for step in 0..=horizon {
        let idx = anchor + step;
        if idx < prices.len() {
            last = prices.dates[idx];
        } else {
            last += chrono::Duration::days(1);
            while matches!(last.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun) {
                last += chrono::Duration::days(1);
            }
        }
        dates.push(last);
    }
    dates
}

/// Reload a simulated path set from `paths.csv` + `warmup.csv`.
fn load_paths(cfg: &RunConfig) -> Result<SurfacePathSet> {
    let paths_csv = cfg
        .paths_csv
        .as_deref()
        .ok_or_else(|| Error::validation("--paths-csv is required for this diagnostic"))?;
    let dir = paths_csv
        .parent()
        .ok_or_else(|| Error::validation("paths CSV has no parent directory"))?;
    let warmup: Vec<f64> = {
        let text = std::fs::read_to_string(dir.join("warmup.csv"))?;
        text.lines()
            .skip(1)
            .map(|l| {
                l.split(',')
                    .nth(1)
                    .ok_or_else(|| Error::validation("bad warmup.csv row"))?
                    .parse::<f64>()
                    .map_err(|e| Error::validation(format!("bad warmup price: {e}")))
            })
            .collect::<Result<_>>()?
    };
    let warmup_returns = warmup.len() - 1;

    let text = std::fs::read_to_string(paths_csv)?;
    let mut paths: Vec<PathRecord> = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse {
                path: paths_csv.display().to_string(),
                line: ln + 1,
                message: format!("expected 11 columns, got {}", fields.len()),
            });
        }
        let f = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|e| Error::Parse {
                path: paths_csv.display().to_string(),
                line: ln + 1,
                message: format!("bad float in column {i}: {e}"),
            })
        };
        let pi: usize = fields[0].parse().map_err(|_| Error::Parse {
            path: paths_csv.display().to_string(),
            line: ln + 1,
            message: "bad path index".into(),
        })?;
        if pi == paths.len() {
            paths.push(PathRecord {
                prices: warmup.clone(),
                states: Vec::new(),
            });
        }
        let record = paths
            .get_mut(pi)
            .ok_or_else(|| Error::validation("path indices must be contiguous"))?;
        let price = f(3)?;
        let state = SurfaceState {
            sigma: f(4)?,
            a: f(5)?,
            p: f(6)?,
            rho: f(7)?,
            eta: f(8)?,
            eps_a: f(9)?,
            eps_p: f(10)?,
        };
        if record.states.is_empty() {
            // Step 0 price equals the last warm-up price.
            record.prices.pop();
            record.prices.push(price);
        } else {
            record.prices.push(price);
        }
        record.states.push(state);
    }
    if paths.is_empty() {
        return Err(Error::validation("paths CSV contains no rows"));
    }
    let horizon = paths[0].states.len() - 1;
    Ok(SurfacePathSet {
        dt: DEFAULT_DT,
        seed: 0,
        horizon,
        warmup_returns,
        mode: SimulationMode::Unconditional,
        paths,
        sigma_floor_events: 0,
        abs_clamp_events: 0,
        correlation_repair: 0.0,
    })
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    match cfg.what.as_deref() {
        Some("pca") => validate_pca(cfg),
        Some("envelopes") => validate_envelopes(cfg),
        Some("lagcorr") => validate_lagcorr(cfg),
        Some("density") => validate_density(cfg),
        other => Err(Error::validation(format!(
            "--what must be pca, envelopes, lagcorr or density (got {other:?})"
        ))),
    }
}

fn validate_pca(cfg: &RunConfig) -> Result<()> {
    let maturities = cfg.maturities_years();
    let (per_path, label): (Vec<Vec<Vec<f64>>>, &str) = if cfg.paths_csv.is_some() {
        let paths = load_paths(cfg)?;
        let grids: Vec<Result<Vec<Vec<f64>>>> = par::map_indexed(paths.n_paths(), |pi| {
            paths.paths[pi]
                .states
                .iter()
                .map(|s| {
                    let surf = s.pssvi()?;
                    let mut row = Vec::with_capacity(maturities.len() * cfg.moneyness.len());
                    for &t in &maturities {
                        for m in &cfg.moneyness {
                            row.push(surf.implied_vol(m.ln(), t)?.max(1e-8));
                        }
                    }
                    Ok(row)
                })
                .collect()
        });
        (grids.into_iter().collect::<Result<_>>()?, "simulated")
    } else {
        // Historical panel PCA: requires one fixed moneyness lattice.
        let panel = load_panel(cfg)?;
        let first = panel.grids[0].to_moneyness()?;
        let mut grids = Vec::with_capacity(panel.grids.len());
        for g in &panel.grids {
            let g = g.to_moneyness()?;
            if g.axis_values != first.axis_values {
                return Err(Error::validation(
                    "historical PCA needs a fixed moneyness lattice across dates",
                ));
            }
            grids.push(g.vols.iter().flatten().copied().collect());
        }
        (vec![grids], "historical")
    };

    // Explained-variance ratios averaged across paths.
    let pcas: Vec<Result<validation::PcaResult>> =
        par::map_indexed(per_path.len(), |i| validation::pca_log_variations(&per_path[i]));
    let pcas: Vec<validation::PcaResult> = pcas.into_iter().collect::<Result<_>>()?;
    let n_components = pcas.iter().map(|p| p.explained_ratios.len()).min().unwrap_or(0);
    let mut csv = String::from("component,mean_explained_ratio\n");
    for c in 0..n_components.min(8) {
        let mean: f64 =
            pcas.iter().map(|p| p.explained_ratios[c]).sum::<f64>() / pcas.len() as f64;
        let _ = writeln!(csv, "{},{}", c + 1, mean);
    }
    write_text(&cfg.out.join("pca_explained.csv"), &csv)?;

    // Average first and second eigenvectors (sign-aligned) in long format.
    for rank in 0..2usize.min(n_components) {
        let avg = if per_path.len() >= 2 {
            validation::average_eigenvector(&per_path, rank)?
        } else {
            pcas[0].eigenvectors[rank].clone()
        };
        let mut vec_csv = String::from("maturity_months,axis_value,loading\n");
        let n_money = avg.len() / maturities.len().max(1);
        for (i, &loading) in avg.iter().enumerate() {
            let mi = i / n_money.max(1);
            let ai = i % n_money.max(1);
            let months = cfg.maturities_months.get(mi).copied().unwrap_or(0);
            let axis_val = cfg.moneyness.get(ai).copied().unwrap_or(f64::NAN);
            let _ = writeln!(vec_csv, "{months},{axis_val},{loading}");
        }
        write_text(
            &cfg.out.join(format!("pca_eigenvector_{}.csv", rank + 1)),
            &vec_csv,
        )?;
    }
    println!("validate pca: {label}, {} path(s)", per_path.len());
    Ok(())
}

fn validate_envelopes(cfg: &RunConfig) -> Result<()> {
    let paths = load_paths(cfg)?;
    let t = cfg.maturity_months as f64 / 12.0;
    let per_date: Vec<Vec<f64>> = (0..=paths.horizon)
        .map(|step| {
            (0..paths.n_paths())
                .map(|pi| paths.atm_vol(pi, step, t))
                .collect()
        })
        .collect();

    // Optional historical overlay: ATM vols of a panel, aligned to the last
    // horizon+1 dates.
    let overlay: Option<Vec<f64>> = if cfg.ivs.is_some() && cfg.prices.is_some() {
        let panel = load_panel(cfg)?;
        let needed = paths.horizon + 1;
        if panel.grids.len() < needed {
            return Err(Error::validation(format!(
                "overlay panel has {} dates, need {needed}",
                panel.grids.len()
            )));
        }
        let mi = panel.grids[0]
            .maturities
            .iter()
            .position(|&m| ((m * 12.0).round() as u32) == cfg.maturity_months)
            .ok_or_else(|| {
                Error::validation(format!(
                    "overlay panel has no {}-month maturity",
                    cfg.maturity_months
                ))
            })?;
        Some(
            panel.grids[panel.grids.len() - needed..]
                .iter()
                .map(|g| g.to_moneyness().and_then(|g| g.atm_vols().map(|v| v[mi])))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let historical = overlay.clone().unwrap_or_else(|| {
        per_date
            .iter()
            .map(|v| {
                let mut s = v.clone();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                ivsim::math::quantile_sorted(&s, 0.5)
            })
            .collect()
    });
    let env = validation::quantile_envelopes(&per_date, &cfg.quantiles, &historical)?;

    let mut csv = String::from("step");
    for q in &env.quantiles {
        let _ = write!(csv, ",q{q}");
    }
    csv.push_str(",overlay\n");
    for (step, row) in env.values.iter().enumerate() {
        let _ = write!(csv, "{step}");
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(csv, ",{}", env.historical[step]);
    }
    write_text(&cfg.out.join("envelopes.csv"), &csv)?;
    let report = serde_json::json!({
        "maturity_months": cfg.maturity_months,
        "quantiles": env.quantiles,
        "exit_frequency": env.exit_frequency,
        "overlay": if overlay.is_some() { "historical" } else { "simulated-median" },
    });
    write_text(&cfg.out.join("envelopes.json"), &serde_json::to_string_pretty(&report)?)?;
    println!(
        "validate envelopes: exit frequencies {:?}",
        report["exit_frequency"]
    );
    Ok(())
}

fn validate_lagcorr(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let mi = panel.grids[0]
        .maturities
        .iter()
        .position(|&m| ((m * 12.0).round() as u32) == cfg.maturity_months)
        .ok_or_else(|| {
            Error::validation(format!("panel has no {}-month maturity", cfg.maturity_months))
        })?;
    let simple = panel.prices.simple_returns();
    let mut iv_var = Vec::with_capacity(panel.grids.len());
    let mut sq_ret = Vec::with_capacity(panel.grids.len());
    for g in &panel.grids {
        let atm = g.to_moneyness()?.atm_vols()?[mi];
        iv_var.push(atm * atm);
        let pos = panel.prices.position(g.date).expect("panel invariant");
        if pos == 0 {
            return Err(Error::validation(format!(
                "grid date {} has no preceding price for a return",
                g.date
            )));
        }
        let r = simple[pos - 1];
        sq_ret.push(r * r);
    }
    let out = validation::lag_correlation(&iv_var, &sq_ret, cfg.max_lag, cfg.confidence)?;
    let mut csv = String::from("lag,correlation,ci_low,ci_high\n");
    for lc in &out {
        let _ = writeln!(csv, "{},{},{},{}", lc.lag, lc.correlation, lc.ci_low, lc.ci_high);
    }
    write_text(&cfg.out.join("lagcorr.csv"), &csv)?;
    println!("validate lagcorr: {} lags", out.len());
    Ok(())
}

fn validate_density(cfg: &RunConfig) -> Result<()> {
    let paths = load_paths(cfg)?;
    let pdv_path = cfg
        .pdv
        .as_deref()
        .ok_or_else(|| Error::validation("--pdv (regression JSON) is required for density"))?;
    let params: PdvParams = serde_json::from_str(&std::fs::read_to_string(pdv_path)?)?;
    let t = cfg.maturity_months as f64 / 12.0;
    let rows = validation::export_joint_density_data(&paths, &params, t)?;
    let mut csv = String::from("source,path,step,predictor,atm_vol\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            if r.path.is_some() { "sim" } else { "hist" },
            r.path.map(|p| p.to_string()).unwrap_or_default(),
            r.step,
            r.predictor,
            r.atm_vol
        );
    }
    write_text(&cfg.out.join("density.csv"), &csv)?;
    println!("validate density: {} rows", rows.len());
    Ok(())
}
