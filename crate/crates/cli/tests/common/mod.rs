//! Shared fixtures for the CLI integration and acceptance suites: reference
//! parameter sets, synthetic market data generation and panel builders.

#![allow(dead_code)]

use chrono::NaiveDate;

use ivsim::data::{AxisKind, IvsGrid, IvsPanel, PriceSeries};
use ivsim::features::{TsplKernel, DEFAULT_DT};
use ivsim::jointmodel::{
    simulate, AssetPdvParams, InitialStates, JointModelParams, SimulationConfig, SimulationMode,
    SurfacePathSet,
};
use ivsim::pdv::PdvParams;
use ivsim::processes::{JacobiBounds, JacobiParams, OuParams};
use ivsim::rng;
use ivsim::ssvi::{PssviParams, VarianceSurface};

pub fn kernel(alpha: f64, delta: f64, cutoff: usize) -> TsplKernel {
    TsplKernel::new(alpha, delta, cutoff, DEFAULT_DT).unwrap()
}

/// Reference correlation of the five drivers (S, a, p, rho, eta): moderate,
/// PSD, with the index negatively correlated to the smile drivers.
pub fn reference_correlation() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, -0.5, -0.3, -0.2, -0.3],
        vec![-0.5, 1.0, 0.4, 0.2, 0.3],
        vec![-0.3, 0.4, 1.0, 0.1, 0.2],
        vec![-0.2, 0.2, 0.1, 1.0, 0.3],
        vec![-0.3, 0.3, 0.2, 0.3, 1.0],
    ]
}

/// Correlation with an independent asset driver: the feature regressions of
/// the round-trip fixture stay exogenous, so their estimators are consistent.
pub fn exogenous_correlation() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, 0.0, 0.0, -0.2, -0.3],
        vec![0.0, 1.0, 0.4, 0.2, 0.3],
        vec![0.0, 0.4, 1.0, 0.1, 0.2],
        vec![-0.2, 0.2, 0.1, 1.0, 0.3],
        vec![-0.3, 0.3, 0.2, 0.3, 1.0],
    ]
}

/// Reference parameter set: S&P-style calibrated values, full cut-offs.
pub fn reference_params(correlation: Vec<Vec<f64>>) -> JointModelParams {
    JointModelParams {
        asset: AssetPdvParams {
            mu: 0.07,
            pdv: PdvParams {
                beta0: 0.03,
                beta1: -0.04,
                beta2: 0.84,
                kernel_trend: kernel(7.74, 0.12, 250),
                kernel_vol: kernel(2.42, 0.06, 1000),
            },
        },
        a_pdv: PdvParams {
            beta0: -8.71e-4,
            beta1: -0.02,
            beta2: 0.22,
            kernel_trend: kernel(1.12, 0.03, 1500),
            kernel_vol: kernel(0.88, 0.03, 1000),
        },
        p_pdv: PdvParams {
            beta0: 0.36,
            beta1: 0.11,
            beta2: -1.35,
            kernel_trend: kernel(1.01, 0.02, 50),
            kernel_vol: kernel(0.78, 0.01, 100),
        },
        eps_a: OuParams::new(16.3, 0.11).unwrap(),
        eps_p: OuParams::new(26.4, 3.24).unwrap(),
        rho: JacobiParams::new(60.4, -0.71, 0.99, JacobiBounds::correlation()).unwrap(),
        eta: JacobiParams::new(8.86, 0.93, 0.62, JacobiBounds::eta()).unwrap(),
        correlation,
    }
}

/// Same dynamics with shortened kernels, for fast smoke tests.
pub fn small_params() -> JointModelParams {
    let mut p = reference_params(reference_correlation());
    p.asset.pdv.kernel_trend = kernel(7.74, 0.12, 30);
    p.asset.pdv.kernel_vol = kernel(2.42, 0.06, 60);
    p.a_pdv.kernel_trend = kernel(1.12, 0.03, 40);
    p.a_pdv.kernel_vol = kernel(0.88, 0.03, 60);
    p.p_pdv.kernel_trend = kernel(1.01, 0.02, 20);
    p.p_pdv.kernel_vol = kernel(0.78, 0.01, 30);
    p
}

/// GBM price history for feature warm-up (deterministic per seed).
pub fn gbm_prices(seed: u64, n_returns: usize, mu: f64, sigma: f64) -> Vec<f64> {
    let mut r = rng::path_rng(seed, 999_983);
    let mut prices = vec![100.0];
    for _ in 0..n_returns {
        let z = rng::standard_normal(&mut r);
        let lr = (mu - 0.5 * sigma * sigma) * DEFAULT_DT + sigma * DEFAULT_DT.sqrt() * z;
        prices.push(prices.last().unwrap() * lr.exp());
    }
    prices
}

/// Consecutive business days (Mon-Fri) starting at a fixed Monday.
pub fn business_dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    (0..n)
        .map(|i| {
            let weeks = i / 5;
            let days = i % 5;
            start + chrono::Duration::days((weeks * 7 + days) as i64)
        })
        .collect()
}

pub struct SimulatedPanel {
    pub panel: IvsPanel,
    /// Generating surface parameters per panel date.
    pub daily_truth: Vec<PssviParams>,
    pub paths: SurfacePathSet,
    /// Index of the first panel date's state in the simulated path.
    pub first_panel_step: usize,
}

/// Simulate one path of the joint model and wrap its last `n_panel` steps
/// into an IVS panel (grids evaluated on the given lattice). The burn-in
/// portion before the panel keeps price history available for warm-up.
pub fn simulate_panel(
    params: &JointModelParams,
    seed: u64,
    burnin: usize,
    n_panel: usize,
    maturities: &[f64],
    moneyness: &[f64],
) -> SimulatedPanel {
    let warm = params.warmup() + 1;
    let horizon = burnin + n_panel;
    let config = SimulationConfig {
        n_paths: 1,
        horizon,
        dt: DEFAULT_DT,
        seed,
        mode: SimulationMode::Unconditional,
        prices: gbm_prices(seed, warm, 0.07, 0.15),
        warmup_returns: warm,
        init: InitialStates::default(),
    };
    let paths = simulate(params, &config).unwrap();
    let path = &paths.paths[0];
    let dates = business_dates(path.prices.len());
    let prices = PriceSeries::new(dates.clone(), path.prices.clone()).unwrap();

    let mut grids = Vec::with_capacity(n_panel);
    let mut daily_truth = Vec::with_capacity(n_panel);
    for step in burnin + 1..=horizon {
        let surf = path.states[step].pssvi().unwrap();
        grids.push(IvsGrid {
            date: dates[warm + step],
            maturities: maturities.to_vec(),
            axis: AxisKind::Moneyness,
            axis_values: vec![moneyness.to_vec(); maturities.len()],
            vols: maturities
                .iter()
                .map(|&t| {
                    moneyness
                        .iter()
                        .map(|m| surf.implied_vol(m.ln(), t).unwrap())
                        .collect()
                })
                .collect(),
        });
        daily_truth.push(surf);
    }
    let boundary = grids.last().unwrap().date;
    let panel = IvsPanel::new(grids, prices, boundary).unwrap();
    SimulatedPanel {
        panel,
        daily_truth,
        paths,
        first_panel_step: burnin + 1,
    }
}

pub fn standard_maturities() -> Vec<f64> {
    (1..=24).map(|m| m as f64 / 12.0).collect()
}

pub fn standard_moneyness() -> Vec<f64> {
    vec![0.7, 0.85, 1.0, 1.15, 1.3]
}

/// Write a panel to `prices.csv` / `ivs.csv` under `dir`.
pub fn write_panel(panel: &IvsPanel, dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let prices_path = dir.join("prices.csv");
    let ivs_path = dir.join("ivs.csv");
    ivsim::data::save_price_csv(&panel.prices, &prices_path).unwrap();
    ivsim::data::save_ivs_csv(&panel.grids, &ivs_path).unwrap();
    (prices_path, ivs_path)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ivsim")
}

pub fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("failed to launch the ivsim binary")
}
