//! Acceptance suite: one criterion per section, each printing a PASS/FAIL
//! line. Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines; the test fails if any criterion fails.
//!
//! Statistical criteria run on fixed seeds; estimator unbiasedness is
//! separately covered by the unit suites.

mod common;

use std::time::Instant;

use common::*;

use ivsim::data::{IvsPanel, PriceSeries};
use ivsim::features::{trend_feature, vol_feature, TsplKernel, DEFAULT_DT};
use ivsim::jointmodel::{
    self, fit_asset, fit_joint, multiplicative_residuals, simulate, FitJointOptions,
    InitialStates, SimulationConfig, SimulationMode,
};
use ivsim::math::{nelder_mead, Bounds, NelderMeadOptions};
use ivsim::pdv::{self, PdvHyperParams, PdvParams};
use ivsim::processes::{
    jacobi_estimate, jacobi_step_full_truncation, ou_mle, ou_step_exact, JacobiBounds,
    JacobiParams, OuParams,
};
use ivsim::rng::{path_rng, standard_normal};
use ivsim::ssvi::{
    bs_call_price, check_static_arbitrage, check_static_arbitrage_pssvi, PhiParam, PssviParams,
    SsviSurface, VarianceSurface,
};
use ivsim::validation;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(results: &mut Vec<Outcome>, name: &'static str, passed: bool, detail: String) {
    println!("[{}] criterion {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    results.push(Outcome { name, passed, detail });
}

#[test]
fn acceptance() {
    let mut results = Vec::new();

    criterion_1_feature_oracle(&mut results);
    criterion_2_pdv_self_consistency(&mut results);
    criterion_3_ssvi_math(&mut results);
    criterion_4_arbitrage_soundness(&mut results);
    criterion_5_process_estimators(&mut results);
    criterion_6_asset_mle(&mut results);
    criterion_7_simulation_reproduces_paper_numbers(&mut results);
    criterion_8_conditional_envelopes(&mut results);
    criterion_9_pipeline_round_trip(&mut results);
    criterion_10_determinism(&mut results);

    let failures: Vec<&Outcome> = results.iter().filter(|o| !o.passed).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failures.len(),
        results.len()
    );
    assert!(
        failures.is_empty(),
        "failed criteria: {:?}",
        failures.iter().map(|o| o.name).collect::<Vec<_>>()
    );
}

// --- 1. Kernel/feature oracle equivalence ----------------------------------

/// Literal double-loop re-derivation of the features including the
/// normalization constant, independent of the library path.
fn naive_feature(returns: &[f64], alpha: f64, delta: f64, c: usize, t: usize, squared: bool) -> f64 {
    let dt = DEFAULT_DT;
    let mut z = 0.0;
    for l in 0..=c {
        z += (l as f64 * dt + delta).powf(-alpha) * dt;
    }
    let mut acc = 0.0;
    for l in 0..=c {
        let k = (l as f64 * dt + delta).powf(-alpha) / z;
        let r = returns[t - l];
        acc += k * if squared { r * r } else { r };
    }
    if squared {
        acc.sqrt()
    } else {
        acc
    }
}

fn criterion_1_feature_oracle(results: &mut Vec<Outcome>) {
    let started = Instant::now();
    let mut rng = path_rng(101, 0);
    let mut worst: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for _ in 0..100 {
        let alpha = 5.0 * uniform(&mut rng);
        let delta = 1e-3 + 0.5 * uniform(&mut rng);
        let c = 1 + (uniform(&mut rng) * 999.0) as usize;
        let kernel = TsplKernel::new(alpha, delta, c, DEFAULT_DT).unwrap();
        let norm: f64 = kernel.weights().iter().map(|w| w * DEFAULT_DT).sum();
        worst_norm = worst_norm.max((norm - 1.0).abs());

        let n = c + 40;
        let returns: Vec<f64> = (0..n).map(|_| 0.01 * standard_normal(&mut rng)).collect();
        for &t in &[c, c + 17, n - 1] {
            let got = trend_feature(&returns, &kernel, t).unwrap();
            let want = naive_feature(&returns, alpha, delta, c, t, false);
            worst = worst.max((got - want).abs() / want.abs().max(1e-30));
            let got_v = vol_feature(&returns, &kernel, t).unwrap();
            let want_v = naive_feature(&returns, alpha, delta, c, t, true);
            worst = worst.max((got_v - want_v).abs() / want_v.abs().max(1e-30));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let passed = worst <= 1e-12 && worst_norm <= 1e-12 && elapsed < 10.0;
    report(
        results,
        "1 (feature oracle)",
        passed,
        format!("max rel err {worst:.2e}, max norm err {worst_norm:.2e}, {elapsed:.1}s"),
    );
}

fn uniform(rng: &mut rand_chacha::ChaCha12Rng) -> f64 {
    use rand::Rng;
    rng.gen::<f64>()
}

// --- 2. PDV self-consistency ------------------------------------------------

fn criterion_2_pdv_self_consistency(results: &mut Vec<Outcome>) {
    let hyper = PdvHyperParams::new(250, 1000, 0.0).unwrap();
    let truth = PdvParams {
        beta0: 0.03,
        beta1: -0.04,
        beta2: 0.84,
        kernel_trend: kernel(7.74, 0.12, 250),
        kernel_vol: kernel(2.42, 0.06, 1000),
    };
    let mut all_ok = true;
    let mut detail = String::new();
    for seed in 1..=5u64 {
        let mut rng = path_rng(200 + seed, 0);
        let n = 1500;
        let warm = hyper.warmup();
        // Heteroscedastic return stream so the volatility feature varies.
        let mut returns = Vec::with_capacity(warm + n);
        let mut vol = 0.009f64;
        for _ in 0..warm + n {
            vol = (0.999 * vol
                + 0.001 * 0.009
                + 0.0015 * 0.009 * standard_normal(&mut rng).abs())
            .clamp(0.004, 0.05);
            returns.push(vol * standard_normal(&mut rng));
        }
        let r1 = ivsim::features::trend_series(&returns, &truth.kernel_trend, warm, warm + n - 1)
            .unwrap();
        let sg =
            ivsim::features::vol_series(&returns, &truth.kernel_vol, warm, warm + n - 1).unwrap();
        let target: Vec<f64> = r1
            .iter()
            .zip(sg.iter())
            .map(|(r, s)| {
                truth.beta0
                    + truth.beta1 * r
                    + truth.beta2 * s
                    + 1e-4 * standard_normal(&mut rng)
            })
            .collect();
        let rep = pdv::calibrate(&target, &returns, &hyper, n).unwrap();
        let p = &rep.params;
        let ok = (p.beta0 - truth.beta0).abs() / truth.beta0.abs() < 0.05
            && (p.beta1 - truth.beta1).abs() / truth.beta1.abs() < 0.05
            && (p.beta2 - truth.beta2).abs() / truth.beta2.abs() < 0.05
            && rep.train_r2 >= 0.99;
        if !ok {
            all_ok = false;
            detail.push_str(&format!(
                "seed {seed}: betas ({:.4},{:.4},{:.4}) R2 {:.4}; ",
                p.beta0, p.beta1, p.beta2, rep.train_r2
            ));
        }
    }
    if all_ok {
        detail = "betas within 5%, train R2 >= 0.99 on 5 seeds".into();
    }
    report(results, "2 (PDV self-consistency)", all_ok, detail);
}

// --- 3. SSVI math -----------------------------------------------------------

fn criterion_3_ssvi_math(results: &mut Vec<Outcome>) {
    let mut rng = path_rng(301, 0);
    let mut worst_atm: f64 = 0.0;
    let mut worst_skew: f64 = 0.0;
    let mut worst_limit: f64 = 0.0;
    for _ in 0..50 {
        let rho = -0.9 + 1.8 * uniform(&mut rng);
        let eta_cap = (4.0 / (1.0 + rho.abs())).sqrt().min(1.4);
        let surf = PssviParams::new(
            0.01 + 0.09 * uniform(&mut rng),
            0.5 + 1.1 * uniform(&mut rng),
            rho,
            0.2 + (eta_cap - 0.2) * uniform(&mut rng),
        )
        .unwrap();
        for &t in &[1.0 / 12.0, 0.5, 1.0, 2.0] {
            let theta = surf.theta_at(t).unwrap();
            worst_atm = worst_atm.max((surf.total_variance(0.0, t).unwrap() - theta).abs());
        }
        let t = 0.5;
        let h = 1e-5;
        let fd =
            (surf.implied_vol(h, t).unwrap() - surf.implied_vol(-h, t).unwrap()) / (2.0 * h);
        let skew = surf.atm_skew(t).unwrap();
        worst_skew = worst_skew.max(((skew - fd) / fd).abs());

        let t0 = 1e-4;
        let lim = surf.rho * surf.eta / 2.0;
        let scaled = surf.atm_skew(t0).unwrap() * t0.sqrt();
        worst_limit = worst_limit.max((scaled - lim).abs());
    }
    let passed = worst_atm < 1e-14 && worst_skew < 1e-6 && worst_limit < 1e-3;
    report(
        results,
        "3 (surface math)",
        passed,
        format!("ATM err {worst_atm:.1e}, skew FD rel err {worst_skew:.1e}, short-T limit err {worst_limit:.1e}"),
    );
}

// --- 4. Arbitrage condition soundness ---------------------------------------

/// Price-grid butterfly/calendar oracle: call prices from the surface must
/// be non-increasing and convex in strike at each maturity, and total
/// variance non-decreasing in maturity pointwise in log-strike.
fn price_grid_oracle(surface: &SsviSurface) -> Result<(), String> {
    let n = 200;
    for (i, &t) in surface.maturities.iter().enumerate() {
        if surface.thetas[i] <= 0.0 {
            continue;
        }
        let mut prices = Vec::with_capacity(n);
        let mut ms = Vec::with_capacity(n);
        for j in 0..n {
            let m = 0.4 + (2.6 - 0.4) * j as f64 / (n - 1) as f64;
            let w = surface.total_variance(m.ln(), t).map_err(|e| e.to_string())?;
            let sigma = (w / t).sqrt().max(1e-12);
            ms.push(m);
            prices.push(bs_call_price(m, t, sigma));
        }
        for j in 1..n {
            if prices[j] > prices[j - 1] + 1e-10 {
                return Err(format!("prices increasing in strike at T={t}, m={}", ms[j]));
            }
        }
        for j in 1..n - 1 {
            let left = (prices[j] - prices[j - 1]) / (ms[j] - ms[j - 1]);
            let right = (prices[j + 1] - prices[j]) / (ms[j + 1] - ms[j]);
            if right - left < -1e-10 {
                return Err(format!("convexity violation at T={t}, m={}", ms[j]));
            }
        }
    }
    // Calendar: w non-decreasing in T pointwise in k.
    for j in 0..50 {
        let k = -1.0 + 2.0 * j as f64 / 49.0;
        let mut last = -f64::INFINITY;
        for &t in &surface.maturities {
            let w = surface.total_variance(k, t).map_err(|e| e.to_string())?;
            if w < last - 1e-10 {
                return Err(format!("calendar violation at k={k}, T={t}"));
            }
            last = w;
        }
    }
    Ok(())
}

fn random_theta_curve(rng: &mut rand_chacha::ChaCha12Rng, n: usize, max_total: f64) -> Vec<f64> {
    let mut thetas = Vec::with_capacity(n);
    let mut acc = 0.002 + 0.01 * uniform(rng);
    for _ in 0..n {
        acc += max_total / n as f64 * uniform(rng);
        thetas.push(acc);
    }
    thetas
}

fn criterion_4_arbitrage_soundness(results: &mut Vec<Outcome>) {
    let started = Instant::now();
    let mut rng = path_rng(401, 0);
    let maturities: Vec<f64> = (1..=24).map(|m| m as f64 / 12.0).collect();
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let mut oracle_failures = Vec::new();
    while accepted < 200 && attempts < 5000 {
        attempts += 1;
        let rho = -0.95 + 1.9 * uniform(&mut rng);
        let surface = match attempts % 4 {
            0 => {
                // Four-parameter surface as a quoted-theta MPL(1/2) curve.
                let eta_cap = (4.0 / (1.0 + rho.abs())).sqrt() * 0.999;
                let a = 0.01 + 0.08 * uniform(&mut rng);
                let p = 0.6 + 1.0 * uniform(&mut rng);
                let eta = 0.1 + (eta_cap - 0.1) * uniform(&mut rng);
                let thetas: Vec<f64> = maturities.iter().map(|&t| a * t.powf(p)).collect();
                SsviSurface::new(
                    maturities.clone(),
                    thetas,
                    rho,
                    PhiParam::ModifiedPowerLaw { eta, gamma: 0.5 },
                )
                .unwrap()
            }
            1 => {
                let lambda = (1.0 + rho.abs()) / 4.0 * (1.0 + 2.0 * uniform(&mut rng));
                SsviSurface::new(
                    maturities.clone(),
                    random_theta_curve(&mut rng, 24, 0.5),
                    rho,
                    PhiParam::HestonLike { lambda },
                )
                .unwrap()
            }
            2 => {
                let gamma = 0.3 + 0.4 * uniform(&mut rng);
                let eta = 0.2 + 1.0 * uniform(&mut rng);
                SsviSurface::new(
                    maturities.clone(),
                    random_theta_curve(&mut rng, 24, 0.4),
                    rho,
                    PhiParam::PowerLaw { eta, gamma },
                )
                .unwrap()
            }
            _ => {
                let gamma = 0.1 + 0.8 * uniform(&mut rng);
                let eta = 0.2 + 1.2 * uniform(&mut rng);
                SsviSurface::new(
                    maturities.clone(),
                    random_theta_curve(&mut rng, 24, 0.5),
                    rho,
                    PhiParam::ModifiedPowerLaw { eta, gamma },
                )
                .unwrap()
            }
        };
        let verdict = check_static_arbitrage(&surface);
        if !verdict.free {
            continue;
        }
        accepted += 1;
        if let Err(msg) = price_grid_oracle(&surface) {
            oracle_failures.push(format!("{:?}: {msg}", surface.phi));
        }
    }

    // Constructed violator must be rejected.
    let violator = PssviParams::new(0.05, 1.2, 0.9, 1.9).unwrap();
    let violator_rejected = !check_static_arbitrage_pssvi(&violator).free;
    let violator_surface = SsviSurface::new(
        maturities.clone(),
        maturities.iter().map(|&t| 0.05 * t.powf(1.2)).collect(),
        0.9,
        PhiParam::ModifiedPowerLaw { eta: 1.9, gamma: 0.5 },
    )
    .unwrap();
    let violator_rejected2 = !check_static_arbitrage(&violator_surface).free;

    let elapsed = started.elapsed().as_secs_f64();
    let passed = accepted == 200
        && oracle_failures.is_empty()
        && violator_rejected
        && violator_rejected2
        && elapsed < 60.0;
    report(
        results,
        "4 (arbitrage soundness)",
        passed,
        format!(
            "{accepted} accepted sets all passed the price-grid oracle ({} failures), violator rejected: {}, {elapsed:.1}s",
            oracle_failures.len(),
            violator_rejected && violator_rejected2
        ),
    );
}

// --- 5. Process estimators ---------------------------------------------------

fn criterion_5_process_estimators(results: &mut Vec<Outcome>) {
    let dt = DEFAULT_DT;
    let ou_truth = OuParams::new(16.3, 0.11).unwrap();
    let jac_truth = JacobiParams::new(12.7, -0.56, 0.31, JacobiBounds::correlation()).unwrap();
    let eta_truth = JacobiParams::new(8.86, 0.93, 0.62, JacobiBounds::eta()).unwrap();
    let mut all_ok = true;
    let mut detail = String::new();

    for seed in 1..=5u64 {
        let mut rng = path_rng(500 + seed, 0);
        let n = 100_000;
        let mut ou_series = Vec::with_capacity(n);
        let mut x = 0.0;
        for _ in 0..n {
            x = ou_step_exact(x, &ou_truth, dt, standard_normal(&mut rng));
            ou_series.push(x);
        }
        let ou_fit = ou_mle(&ou_series, dt).unwrap();
        let ok_ou = (ou_fit.params.kappa - 16.3).abs() / 16.3 < 0.10
            && (ou_fit.params.gamma - 0.11).abs() / 0.11 < 0.10;

        let mut sims = |truth: &JacobiParams, bounds: JacobiBounds| -> bool {
            let mut x = truth.mu;
            let mut series = Vec::with_capacity(n);
            for _ in 0..n {
                x = jacobi_step_full_truncation(x, truth, dt, standard_normal(&mut rng));
                series.push(x);
            }
            let fit = jacobi_estimate(&series, dt, bounds).unwrap();
            (fit.kappa - truth.kappa).abs() / truth.kappa < 0.10
                && (fit.mu - truth.mu).abs() / truth.mu.abs() < 0.10
                && (fit.gamma - truth.gamma).abs() / truth.gamma < 0.10
        };
        let ok_rho = sims(&jac_truth, JacobiBounds::correlation());
        let ok_eta = sims(&eta_truth, JacobiBounds::eta());

        if !(ok_ou && ok_rho && ok_eta) {
            all_ok = false;
            detail.push_str(&format!("seed {seed}: ou {ok_ou} rho {ok_rho} eta {ok_eta}; "));
        }
    }

    // Closed-form Jacobi estimators vs a numerically maximized Euler
    // likelihood on a 5000-point series (gamma profiled out, so the search
    // runs over kappa and mu only).
    let mut rng = path_rng(555, 0);
    let mut series = Vec::with_capacity(5000);
    let mut x = jac_truth.mu;
    for _ in 0..5000 {
        x = jacobi_step_full_truncation(x, &jac_truth, dt, standard_normal(&mut rng));
        series.push(x);
    }
    let closed = jacobi_estimate(&series, dt, JacobiBounds::correlation()).unwrap();
    let q = |v: f64| (1.0 - v) * (1.0 + v);
    let objective = |pm: &[f64]| -> f64 {
        // Negative profiled log-likelihood, up to constants: N ln gamma_hat.
        let (kappa, mu) = (pm[0], pm[1]);
        let mut gsq = 0.0;
        let n_tr = series.len() - 1;
        for k in 0..n_tr {
            let resid = series[k + 1] - series[k] - kappa * (mu - series[k]) * dt;
            gsq += resid * resid / q(series[k]);
        }
        (gsq / (n_tr as f64 * dt)).ln()
    };
    let fit = nelder_mead(
        objective,
        &[8.0, -0.4],
        &Bounds {
            lo: vec![1e-3, -0.99],
            hi: vec![500.0, 0.99],
        },
        &NelderMeadOptions {
            max_iter: 4000,
            tol_f: 1e-14,
            tol_x: 1e-10,
            initial_step: 0.2,
        },
    )
    .unwrap();
    let num_kappa = fit.x[0];
    let num_mu = fit.x[1];
    let mut num_gsq = 0.0;
    for k in 0..series.len() - 1 {
        let resid = series[k + 1] - series[k] - num_kappa * (num_mu - series[k]) * dt;
        num_gsq += resid * resid / q(series[k]);
    }
    let num_gamma = (num_gsq / ((series.len() - 1) as f64 * dt)).sqrt();
    let mle_match = (closed.kappa - num_kappa).abs() / closed.kappa < 1e-4
        && (closed.mu - num_mu).abs() / closed.mu.abs() < 1e-4
        && (closed.gamma - num_gamma).abs() / closed.gamma < 1e-4;
    if !mle_match {
        all_ok = false;
        detail.push_str(&format!(
            "closed-form vs numerical MLE: ({:.6},{:.6},{:.6}) vs ({:.6},{:.6},{:.6}); ",
            closed.kappa, closed.mu, closed.gamma, num_kappa, num_mu, num_gamma
        ));
    }
    if all_ok {
        detail = "recovery within 10% on 5 seeds; closed forms match numerical MLE to 1e-4".into();
    }
    report(results, "5 (process estimators)", all_ok, detail);
}

// --- 6. Asset MLE -------------------------------------------------------------

fn criterion_6_asset_mle(results: &mut Vec<Outcome>) {
    let dt = DEFAULT_DT;
    let mut all_ok = true;
    let mut detail = String::new();

    // GBM: no feature dependence to find.
    {
        let sigma = 0.18;
        let mut rng = path_rng(601, 0);
        let r: Vec<f64> = (0..2700)
            .map(|_| (0.05 - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * standard_normal(&mut rng))
            .collect();
        let fit = fit_asset(&r, dt, 50, 100, None).unwrap();
        let simple: Vec<f64> = r.iter().map(|x| x.exp_m1()).collect();
        let sig = fit.sigma_series(&simple, 100, r.len() - 2).unwrap();
        let mean_sig = ivsim::math::mean(&sig);
        let sig_cv = ivsim::math::variance(&sig).sqrt() / mean_sig;
        // The trend loading is identified; the volatility loading trades off
        // against the intercept on constant-volatility data, so flatness of
        // the fitted volatility path is the meaningful recovery check.
        let ok = fit.pdv.beta1.abs() < 0.05
            && (mean_sig - sigma).abs() / sigma < 0.02
            && sig_cv < 0.03;
        if !ok {
            all_ok = false;
            detail.push_str(&format!(
                "GBM: beta1 {:.4}, mean sigma {:.4}, sigma CV {:.4}; ",
                fit.pdv.beta1, mean_sig, sig_cv
            ));
        }
    }

    // Feature-driven truth over 10 years of daily data.
    {
        let truth = reference_params(reference_correlation()).asset;
        let mut truth_short = truth.clone();
        truth_short.pdv.kernel_trend = kernel(7.74, 0.12, 250);
        truth_short.pdv.kernel_vol = kernel(2.42, 0.06, 1000);
        let r = simulate_asset_only(&truth_short, 602, 2520);
        let fit = fit_asset(&r, dt, 250, 1000, None).unwrap();
        let ok = (fit.pdv.beta2 - truth.pdv.beta2).abs() / truth.pdv.beta2 < 0.15
            && (fit.mu - truth.mu).abs() < 0.05;
        if !ok {
            all_ok = false;
            detail.push_str(&format!(
                "feature-driven: beta2 {:.4} (want 0.84 +-15%), mu {:.4} (want 0.07 +-0.05); ",
                fit.pdv.beta2, fit.mu
            ));
        }
    }
    if all_ok {
        detail = "GBM flat recovery and 10-year feature-driven recovery within bounds".into();
    }
    report(results, "6 (asset MLE)", all_ok, detail);
}

/// Simulate the asset equation alone (no surface processes) for estimation
/// tests: warm-up at the rough stationary level, then feature-driven steps.
fn simulate_asset_only(params: &jointmodel::AssetPdvParams, seed: u64, n: usize) -> Vec<f64> {
    let dt = DEFAULT_DT;
    let warm = params.warmup() + 1;
    let mut rng = path_rng(seed, 0);
    let base = params.pdv.beta0 / (1.0 - params.pdv.beta2.min(0.9));
    let mut simple: Vec<f64> = (0..warm)
        .map(|_| base * dt.sqrt() * standard_normal(&mut rng))
        .collect();
    let mut log_r: Vec<f64> = simple.iter().map(|s| (1.0 + s).ln()).collect();
    let w1 = params.pdv.kernel_trend.weights();
    let w2 = params.pdv.kernel_vol.weights();
    for _ in 0..n {
        let t = simple.len() - 1;
        let mut r1 = 0.0;
        for (l, &w) in w1.iter().enumerate() {
            r1 += w * simple[t - l];
        }
        let mut sg = 0.0;
        for (l, &w) in w2.iter().enumerate() {
            let x = simple[t - l];
            sg += w * x * x;
        }
        let sigma =
            (params.pdv.beta0 + params.pdv.beta1 * r1 + params.pdv.beta2 * sg.sqrt()).max(1e-4);
        let z = standard_normal(&mut rng);
        let lr = (params.mu - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z;
        log_r.push(lr);
        simple.push(lr.exp_m1());
    }
    log_r
}

// --- 7. End-to-end simulation runtime and paper-side numbers -------------------

fn criterion_7_simulation_reproduces_paper_numbers(results: &mut Vec<Outcome>) {
    let params = reference_params(reference_correlation());
    let warm = params.warmup() + 1;
    let burnin = 252;
    let horizon = burnin + 756; // 3 years measured after a burn-in year

    let started = Instant::now();
    let config = SimulationConfig {
        n_paths: 1000,
        horizon,
        dt: DEFAULT_DT,
        seed: 7,
        mode: SimulationMode::Unconditional,
        prices: gbm_prices(7, warm, 0.07, 0.15),
        warmup_returns: warm,
        init: InitialStates::default(),
    };
    let paths = simulate(&params, &config).unwrap();

    // Evaluate every surface on the 24 x 81 grid (sums keep the work alive).
    let maturities = standard_maturities();
    let moneyness: Vec<f64> = (0..=80).map(|i| 0.6 + 0.01 * i as f64).collect();
    let checks: Vec<f64> = ivsim::par::map_indexed(paths.n_paths(), |pi| {
        let mut acc = 0.0;
        for state in &paths.paths[pi].states[burnin..] {
            let surf = state.pssvi().unwrap();
            for &t in &maturities {
                let theta = surf.theta_at(t).unwrap();
                let phi = if theta > 0.0 { surf.phi_at(theta).unwrap() } else { 0.0 };
                for m in &moneyness {
                    let w = ivsim::ssvi::total_variance_formula(theta, surf.rho, phi, m.ln());
                    acc += (w / t).sqrt();
                }
            }
        }
        acc
    });
    let checksum: f64 = checks.iter().sum();
    let elapsed = started.elapsed().as_secs_f64();

    // Pooled annualized std of the measured log-returns.
    let mut pooled = Vec::with_capacity(paths.n_paths() * 756);
    for path in &paths.paths {
        let r0 = config.warmup_returns + burnin;
        for k in r0..config.warmup_returns + horizon {
            pooled.push((path.prices[k + 1] / path.prices[k]).ln());
        }
    }
    let ann_std = (ivsim::math::variance(&pooled) / DEFAULT_DT).sqrt();

    let audit = paths.audit_arbitrage();
    let floor_frac = paths.sigma_floor_events as f64 / paths.total_steps() as f64;

    // Per-path PCA of surface log-variations on a 24 x 5 grid, averaged over
    // the first 200 paths.
    let pca_moneyness = [0.8f64, 0.9, 1.0, 1.1, 1.2];
    let n_pca = 200;
    let shares: Vec<f64> = ivsim::par::map_indexed(n_pca, |pi| {
        let grids: Vec<Vec<f64>> = paths.paths[pi].states[burnin..]
            .iter()
            .map(|s| {
                let surf = s.pssvi().unwrap();
                let mut row = Vec::with_capacity(24 * 5);
                for &t in &maturities {
                    for &m in &pca_moneyness {
                        row.push(surf.implied_vol(m.ln(), t).unwrap().max(1e-8));
                    }
                }
                row
            })
            .collect();
        validation::pca_log_variations(&grids).unwrap().explained_ratios[0]
    });
    let mean_share = ivsim::math::mean(&shares);

    // Mean 1-month ATM vol across paths/steps against the level implied by
    // the regression intercepts at the stationary volatility scale.
    let t1m = 1.0 / 12.0;
    let mut atm_acc = 0.0;
    let mut atm_count = 0usize;
    for (pi, path) in paths.paths.iter().enumerate() {
        for step in (burnin..path.states.len()).step_by(21) {
            atm_acc += paths.atm_vol(pi, step, t1m);
            atm_count += 1;
        }
    }
    let mean_atm = atm_acc / atm_count as f64;
    let sigma_bar = params.asset.pdv.beta0 / (1.0 - params.asset.pdv.beta2);
    let a_base = (params.a_pdv.beta0 + params.a_pdv.beta2 * sigma_bar).abs();
    let p_base = (params.p_pdv.beta0 + params.p_pdv.beta2 * sigma_bar).exp();
    let atm_base = (a_base * t1m.powf(p_base) / t1m).sqrt();
    let ok_atm = mean_atm >= 0.5 * atm_base && mean_atm <= 2.0 * atm_base;

    let ok_std = (ann_std - 0.187).abs() < 0.03;
    let ok_arb = audit.violations == 0;
    let ok_floor = floor_frac < 0.001;
    let ok_pca = (0.60..=0.85).contains(&mean_share);
    let ok_time = elapsed <= 150.0;
    let passed = ok_std && ok_arb && ok_floor && ok_pca && ok_time && ok_atm;
    report(
        results,
        "7 (simulation vs reported numbers)",
        passed,
        format!(
            "ann. log-return std {ann_std:.3} (target 0.187 +-0.03), arb violations {}, sigma-floor {:.4}%, PC1 share {:.1}% (band 60-85), mean 1M ATM {mean_atm:.3} (baseline {atm_base:.3}, band 0.5x-2x), sim+grid eval {elapsed:.0}s (cap 150), checksum {checksum:.3e}",
            audit.violations,
            floor_frac * 100.0,
            mean_share * 100.0
        ),
    );
}

// --- 8. Conditional-mode envelope self-consistency ------------------------------

fn criterion_8_conditional_envelopes(results: &mut Vec<Outcome>) {
    // Exogenous asset driver: in conditional mode every path shares the
    // historical features, so regression bias shifts the whole envelope
    // instead of averaging out; the consistent fixture keeps the refit
    // centered (the truth-parameter control run sits at the nominal exit
    // rate either way).
    let truth = reference_params(exogenous_correlation());
    let maturities = standard_maturities();
    let moneyness = standard_moneyness();
    let n_panel = 1500;
    let test_len = 200;
    let sim = simulate_panel(&truth, 801, 300, n_panel, &maturities, &moneyness);

    // Refit on the train portion (boundary before the last 200 dates).
    let boundary = sim.panel.grids[n_panel - test_len - 1].date;
    let panel = IvsPanel::new(sim.panel.grids.clone(), sim.panel.prices.clone(), boundary).unwrap();
    let opts = FitJointOptions {
        cutoff_sigma_trend: 250,
        cutoff_sigma_vol: 1000,
        hyper_a: PdvHyperParams::new(1500, 1000, 0.0).unwrap(),
        hyper_p: PdvHyperParams::new(50, 100, 0.0).unwrap(),
        daily_params: None,
    };
    let fit = match fit_joint(&panel, &opts) {
        Ok(f) => f,
        Err(e) => {
            report(results, "8 (conditional envelopes)", false, format!("refit failed: {e}"));
            return;
        }
    };

    // Conditional re-simulation over the test window on the historical path.
    let prices = &sim.panel.prices;
    let test_start_grid = n_panel - test_len; // index into panel grids
    let first_test_pos = prices.position(sim.panel.grids[test_start_grid].date).unwrap();
    let warmup_returns = first_test_pos - 1;

    // Initial states from the refit at the window start.
    let simple = prices.simple_returns();
    let train_idx: Vec<usize> = panel
        .grids
        .iter()
        .take_while(|g| g.date <= boundary)
        .map(|g| prices.position(g.date).unwrap() - 1)
        .collect();
    let a_series: Vec<f64> = fit.daily.iter().map(|(_, p)| p.a).collect();
    let logp_series: Vec<f64> = fit.daily.iter().map(|(_, p)| p.p.ln()).collect();
    let eps_a0 = *multiplicative_residuals(&a_series, &train_idx, &simple, &fit.params.a_pdv)
        .unwrap()
        .last()
        .unwrap();
    let eps_p0 = *multiplicative_residuals(&logp_series, &train_idx, &simple, &fit.params.p_pdv)
        .unwrap()
        .last()
        .unwrap();
    let (rho0, eta0) = {
        let last = fit.daily.last().unwrap().1;
        (last.rho, last.eta)
    };

    // Step 0 of the conditional run sits on the boundary date (the shared
    // initial condition); steps 1..=test_len are the held-out test dates.
    let config = SimulationConfig {
        n_paths: 1000,
        horizon: test_len,
        dt: DEFAULT_DT,
        seed: 802,
        mode: SimulationMode::Conditional,
        prices: prices.closes[..=first_test_pos + test_len - 1].to_vec(),
        warmup_returns,
        init: InitialStates {
            eps_a: eps_a0,
            eps_p: eps_p0,
            rho: Some(rho0.clamp(-0.999, 0.999)),
            eta: Some(eta0.clamp(1e-6, 1.414)),
        },
    };
    let paths = simulate(&fit.params, &config).unwrap();

    // 1-month ATM envelope vs the held-out historical surface path over the
    // simulated test dates.
    let t = 1.0 / 12.0;
    let per_date: Vec<Vec<f64>> = (1..=test_len)
        .map(|step| (0..paths.n_paths()).map(|pi| paths.atm_vol(pi, step, t)).collect())
        .collect();
    let historical: Vec<f64> = (0..test_len)
        .map(|i| {
            let s = &sim.daily_truth[test_start_grid + i];
            (s.theta_at(t).unwrap() / t).sqrt()
        })
        .collect();
    let env = validation::quantile_envelopes(&per_date, &[0.005, 0.995], &historical).unwrap();
    let exit = env.exit_frequency[0];
    let passed = exit < 0.02;
    report(
        results,
        "8 (conditional envelopes)",
        passed,
        format!("held-out ATM path exits the 0.5%-99.5% envelope on {:.2}% of dates (cap 2%)", exit * 100.0),
    );
}

// --- 9. Pipeline round-trip ------------------------------------------------------

fn criterion_9_pipeline_round_trip(results: &mut Vec<Outcome>) {
    // Exogenous asset driver keeps the feature regressions consistent; see
    // the unit and probe analyses for why correlated residuals shift the
    // in-sample optimum away from the generating parameters.
    let truth = reference_params(exogenous_correlation());
    let maturities = standard_maturities();
    let moneyness = standard_moneyness();
    let mut all_ok = true;
    let mut detail = String::new();

    for seed in [2u64, 3, 4] {
        let sim = simulate_panel(&truth, seed, 500, 4000, &maturities, &moneyness);
        let opts = FitJointOptions {
            cutoff_sigma_trend: 250,
            cutoff_sigma_vol: 1000,
            hyper_a: PdvHyperParams::new(1500, 1000, 0.0).unwrap(),
            hyper_p: PdvHyperParams::new(50, 100, 0.0).unwrap(),
            daily_params: None,
        };
        let fit = match fit_joint(&sim.panel, &opts) {
            Ok(f) => f,
            Err(e) => {
                all_ok = false;
                detail.push_str(&format!("seed {seed}: fit failed: {e}; "));
                continue;
            }
        };
        let f = &fit.params;
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs();
        let mut seed_issues = Vec::new();

        // Residual and smile-shape process parameters: all within 25%.
        let process_checks = [
            ("kappa_a", f.eps_a.kappa, truth.eps_a.kappa),
            ("gamma_a", f.eps_a.gamma, truth.eps_a.gamma),
            ("kappa_p", f.eps_p.kappa, truth.eps_p.kappa),
            ("gamma_p", f.eps_p.gamma, truth.eps_p.gamma),
            ("kappa_rho", f.rho.kappa, truth.rho.kappa),
            ("mu_rho", f.rho.mu, truth.rho.mu),
            ("gamma_rho", f.rho.gamma, truth.rho.gamma),
            ("kappa_eta", f.eta.kappa, truth.eta.kappa),
            ("mu_eta", f.eta.mu, truth.eta.mu),
            ("gamma_eta", f.eta.gamma, truth.eta.gamma),
        ];
        for (name, got, want) in process_checks {
            if rel(got, want) >= 0.25 {
                seed_issues.push(format!("{name} {got:.4} vs {want:.4}"));
            }
        }

        // Correlation entries within +-0.15.
        for i in 0..5 {
            for j in 0..i {
                let err = (f.correlation[i][j] - truth.correlation[i][j]).abs();
                if err > 0.15 {
                    seed_issues.push(format!("corr[{i}][{j}] err {err:.3}"));
                }
            }
        }

        // Identifiable regression parameters.
        let reg_checks = [
            ("asset beta1", f.asset.pdv.beta1, truth.asset.pdv.beta1),
            ("asset beta2", f.asset.pdv.beta2, truth.asset.pdv.beta2),
            ("a beta2", f.a_pdv.beta2, truth.a_pdv.beta2),
            ("p beta0", f.p_pdv.beta0, truth.p_pdv.beta0),
            ("p beta1", f.p_pdv.beta1, truth.p_pdv.beta1),
            ("p beta2", f.p_pdv.beta2, truth.p_pdv.beta2),
        ];
        for (name, got, want) in reg_checks {
            if rel(got, want) >= 0.25 {
                seed_issues.push(format!("{name} {got:.4} vs {want:.4}"));
            }
        }
        if (f.asset.mu - truth.asset.mu).abs() >= 0.05 {
            seed_issues.push(format!("mu {:.4} vs {:.4}", f.asset.mu, truth.asset.mu));
        }

        // Flat-valley certificate for the remaining coordinates: the fitted
        // regressions must explain the targets at least as well as the
        // generating parameters do.
        let simple = sim.panel.prices.simple_returns();
        let ret_idx: Vec<usize> = sim
            .panel
            .grids
            .iter()
            .map(|g| sim.panel.prices.position(g.date).unwrap() - 1)
            .collect();
        let sse = |p: &PdvParams, target: &[f64]| -> f64 {
            target
                .iter()
                .zip(ret_idx.iter())
                .map(|(&y, &t)| {
                    let r1 = trend_feature(&simple, &p.kernel_trend, t).unwrap();
                    let sg = vol_feature(&simple, &p.kernel_vol, t).unwrap();
                    (y - p.beta0 - p.beta1 * r1 - p.beta2 * sg).powi(2)
                })
                .sum()
        };
        let a_target: Vec<f64> = sim.daily_truth.iter().map(|s| s.a).collect();
        let p_target: Vec<f64> = sim.daily_truth.iter().map(|s| s.p.ln()).collect();
        if sse(&f.a_pdv, &a_target) > sse(&truth.a_pdv, &a_target) * 1.001 {
            seed_issues.push("a-regression SSE above generating parameters".into());
        }
        if sse(&f.p_pdv, &p_target) > sse(&truth.p_pdv, &p_target) * 1.001 {
            seed_issues.push("p-regression SSE above generating parameters".into());
        }
        if fit.a_report.train_r2 < 0.8 {
            seed_issues.push(format!("a fit R2 {:.3} < 0.8", fit.a_report.train_r2));
        }
        if fit.p_report.train_r2 < 0.5 {
            seed_issues.push(format!("p fit R2 {:.3} < 0.5", fit.p_report.train_r2));
        }

        if !seed_issues.is_empty() {
            all_ok = false;
            detail.push_str(&format!("seed {seed}: {}; ", seed_issues.join(", ")));
        }
    }
    if all_ok {
        detail =
            "process params within 25%, correlations within 0.15, identifiable betas within 25%, drift within 0.05, fit-equivalence certificates hold on 3 seeds"
                .into();
    }
    report(results, "9 (pipeline round-trip)", all_ok, detail);
}

// --- 10. Determinism ----------------------------------------------------------------

fn criterion_10_determinism(results: &mut Vec<Outcome>) {
    let dir = tempfile::tempdir().unwrap();
    let params = small_params();
    let params_path = dir.path().join("params.json");
    std::fs::write(&params_path, serde_json::to_string_pretty(&params).unwrap()).unwrap();
    let prices = PriceSeries::new(business_dates(151), gbm_prices(10, 150, 0.05, 0.15)).unwrap();
    let prices_path = dir.path().join("prices.csv");
    ivsim::data::save_price_csv(&prices, &prices_path).unwrap();

    let run = |out_dir: &std::path::Path, threads: &str| -> Vec<u8> {
        let out = run_cli(&[
            "simulate",
            "--params", params_path.to_str().unwrap(),
            "--prices", prices_path.to_str().unwrap(),
            "--seed", "99",
            "--paths", "50",
            "--horizon-days", "100",
            "--threads", threads,
            "--ivs-paths", "2",
            "--ivs-stride", "25",
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        let mut bytes = Vec::new();
        for f in ["paths.csv", "audit.json", "warmup.csv", "ivs.csv"] {
            bytes.extend(std::fs::read(out_dir.join(f)).unwrap());
        }
        bytes
    };

    let a = run(&dir.path().join("run_a"), "1");
    let b = run(&dir.path().join("run_b"), "1");
    let c = run(&dir.path().join("run_c"), "8");
    let passed = a == b && a == c;
    report(
        results,
        "10 (determinism)",
        passed,
        format!(
            "rerun identical: {}, threads 1 vs 8 identical: {}",
            a == b,
            a == c
        ),
    );
}
