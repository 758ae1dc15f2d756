//! Monte Carlo simulation of the joint dynamics and lazy surface evaluation.
//!
//! Paths are independent: each one draws from its own counter-based random
//! stream, so results are identical for any worker count. Within a step the
//! update order is: draw the correlated noise, advance the asset (or read
//! the historical return in conditional mode), recompute the return features
//! at the new date, advance the residual and smile-shape processes, then
//! form the surface parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointmodel::{JointModelParams, SIGMA_FLOOR};
use crate::par;
use crate::rng::{path_rng, standard_normal, CorrelatedNormals};
use crate::ssvi::{delta_to_moneyness, PssviParams, VarianceSurface};

/// Asset-path source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMode {
    /// Simulate the index together with the surface.
    Unconditional,
    /// Keep the supplied historical index path; simulate only the surface
    /// state (residuals and smile shape), conditioned on the asset noise.
    Conditional,
}

impl std::str::FromStr for SimulationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconditional" => Ok(SimulationMode::Unconditional),
            "conditional" => Ok(SimulationMode::Conditional),
            other => Err(Error::validation(format!("unknown simulation mode '{other}'"))),
        }
    }
}

/// Starting values for the stochastic state. `None` for the smile shapes
/// means their long-run means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialStates {
    pub eps_a: f64,
    pub eps_p: f64,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
}

impl Default for InitialStates {
    fn default() -> Self {
        InitialStates {
            eps_a: 0.0,
            eps_p: 0.0,
            rho: None,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    /// Steps to simulate (the state is also recorded at step 0).
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
    pub mode: SimulationMode,
    /// Price history for feature warm-up; in conditional mode this must
    /// extend over the whole simulation window (`warmup + horizon` returns).
    pub prices: Vec<f64>,
    /// Number of returns in `prices` reserved as warm-up; the simulation
    /// starts at price index `warmup_returns`.
    pub warmup_returns: usize,
    pub init: InitialStates,
}

/// Surface and asset state at one step of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceState {
    pub sigma: f64,
    pub a: f64,
    pub p: f64,
    pub rho: f64,
    pub eta: f64,
    pub eps_a: f64,
    pub eps_p: f64,
}

impl SurfaceState {
    /// Four-parameter surface for evaluation, with boundary states nudged
    /// strictly inside their open domains.
    pub fn pssvi(&self) -> Result<PssviParams> {
        PssviParams::new(
            self.a,
            self.p,
            self.rho.clamp(-1.0 + 1e-12, 1.0 - 1e-12),
            self.eta.max(1e-12),
        )
    }
}

#[derive(Debug, Clone)]
pub struct PathRecord {
    /// Full price path including warm-up (`warmup_returns + horizon + 1` prices).
    pub prices: Vec<f64>,
    /// State at steps `0..=horizon`.
    pub states: Vec<SurfaceState>,
}

/// All simulated paths plus event counters.
#[derive(Debug, Clone)]
pub struct SurfacePathSet {
    pub dt: f64,
    pub seed: u64,
    pub horizon: usize,
    pub warmup_returns: usize,
    pub mode: SimulationMode,
    pub paths: Vec<PathRecord>,
    /// Steps where the spot volatility hit its floor.
    pub sigma_floor_events: usize,
    /// Steps where the ATM-level expression went negative before the
    /// absolute value.
    pub abs_clamp_events: usize,
    /// Entrywise magnitude of the PSD repair applied to the correlation
    /// matrix before factorization.
    pub correlation_repair: f64,
}

impl SurfacePathSet {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Total number of simulated (path, step) state updates.
    pub fn total_steps(&self) -> usize {
        self.paths.len() * self.horizon
    }

    /// ATM implied volatility of one state at maturity `t`.
    pub fn atm_vol(&self, path: usize, step: usize, t: f64) -> f64 {
        let s = &self.paths[path].states[step];
        (s.a * t.powf(s.p) / t).sqrt()
    }

    /// Count states violating the by-construction arbitrage bounds.
    pub fn audit_arbitrage(&self) -> ArbitrageAudit {
        let mut audit = ArbitrageAudit::default();
        let sqrt2 = std::f64::consts::SQRT_2;
        for path in &self.paths {
            for s in &path.states {
                audit.checked_states += 1;
                let margin = s.eta * s.eta * (1.0 + s.rho.abs());
                if !(s.a >= 0.0)
                    || !(s.p >= 0.0)
                    || !(-1.0..=1.0).contains(&s.rho)
                    || !(0.0..=sqrt2).contains(&s.eta)
                    || margin > 4.0 + 1e-12
                {
                    audit.violations += 1;
                }
            }
        }
        audit
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ArbitrageAudit {
    pub checked_states: usize,
    pub violations: usize,
}

struct KernelSet {
    sigma_trend: Vec<f64>,
    sigma_vol: Vec<f64>,
    a_trend: Vec<f64>,
    a_vol: Vec<f64>,
    p_trend: Vec<f64>,
    p_vol: Vec<f64>,
}

#[inline]
fn window_dot(returns: &[f64], weights: &[f64], t: usize, squared: bool) -> f64 {
    let mut acc = 0.0;
    for (l, &w) in weights.iter().enumerate() {
        let r = returns[t - l];
        acc += w * if squared { r * r } else { r };
    }
    acc
}

/// Simulate the joint model.
pub fn simulate(params: &JointModelParams, config: &SimulationConfig) -> Result<SurfacePathSet> {
    params.validate()?;
    // Features at step 0 look back from the last warm-up return, so one
    // extra return beyond the longest cut-off is required.
    let warm = params.warmup() + 1;
    if config.warmup_returns < warm {
        return Err(Error::validation(format!(
            "warm-up of {} returns is shorter than the feature warm-up {warm}",
            config.warmup_returns
        )));
    }
    if config.prices.len() < config.warmup_returns + 1 {
        return Err(Error::validation("price history shorter than the declared warm-up"));
    }
    if config.mode == SimulationMode::Conditional
        && config.prices.len() < config.warmup_returns + config.horizon + 1
    {
        return Err(Error::validation(format!(
            "conditional mode needs {} prices ({} warm-up returns + {} steps), got {}",
            config.warmup_returns + config.horizon + 1,
            config.warmup_returns,
            config.horizon,
            config.prices.len()
        )));
    }
    if let Some((i, &p)) = config.prices.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
        return Err(Error::validation(format!("price {p} at index {i} not positive")));
    }
    if config.horizon == 0 || config.n_paths == 0 {
        return Err(Error::validation("horizon and path count must be positive"));
    }

    let sampler = CorrelatedNormals::new(&params.correlation_matrix())?;
    let kernels = KernelSet {
        sigma_trend: params.asset.pdv.kernel_trend.weights(),
        sigma_vol: params.asset.pdv.kernel_vol.weights(),
        a_trend: params.a_pdv.kernel_trend.weights(),
        a_vol: params.a_pdv.kernel_vol.weights(),
        p_trend: params.p_pdv.kernel_trend.weights(),
        p_vol: params.p_pdv.kernel_vol.weights(),
    };

    struct PathOutput {
        record: PathRecord,
        sigma_floor: usize,
        abs_clamp: usize,
    }

    let outputs: Vec<Result<PathOutput>> = par::map_indexed(config.n_paths, |path_idx| {
        let mut rng = path_rng(config.seed, path_idx as u64);
        let dt = config.dt;
        let sqrt_dt = dt.sqrt();
        let asset = &params.asset;
        let r0 = config.warmup_returns;

        let mut prices: Vec<f64>;
        let mut simple: Vec<f64>;
        match config.mode {
            SimulationMode::Unconditional => {
                prices = config.prices[..=r0].to_vec();
                prices.reserve(config.horizon);
                simple = Vec::with_capacity(r0 + config.horizon);
                simple.extend(prices.windows(2).map(|w| (w[1] - w[0]) / w[0]));
            }
            SimulationMode::Conditional => {
                prices = config.prices[..=r0 + config.horizon].to_vec();
                simple = prices.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
            }
        }

        let mut sigma_floor = 0usize;
        let mut abs_clamp = 0usize;

        let features = |simple: &[f64], t: usize| -> [f64; 6] {
            [
                window_dot(simple, &kernels.sigma_trend, t, false),
                window_dot(simple, &kernels.sigma_vol, t, true).max(0.0).sqrt(),
                window_dot(simple, &kernels.a_trend, t, false),
                window_dot(simple, &kernels.a_vol, t, true).max(0.0).sqrt(),
                window_dot(simple, &kernels.p_trend, t, false),
                window_dot(simple, &kernels.p_vol, t, true).max(0.0).sqrt(),
            ]
        };

        let mut eps_a = config.init.eps_a;
        let mut eps_p = config.init.eps_p;
        let mut rho = config.init.rho.unwrap_or(params.rho.mu);
        let mut eta = config.init.eta.unwrap_or(params.eta.mu);
        if !params.rho.bounds.contains_strictly(rho) || !params.eta.bounds.contains_strictly(eta) {
            return Err(Error::validation(
                "initial smile-shape states must lie strictly inside their bounds",
            ));
        }

        let mk_state = |f: &[f64; 6], eps_a: f64, eps_p: f64, rho: f64, eta: f64, sigma_floor: &mut usize, abs_clamp: &mut usize| {
            let mut sigma = asset.pdv.beta0 + asset.pdv.beta1 * f[0] + asset.pdv.beta2 * f[1];
            if sigma < SIGMA_FLOOR {
                sigma = SIGMA_FLOOR;
                *sigma_floor += 1;
            }
            let inner_a =
                params.a_pdv.beta0 + params.a_pdv.beta1 * f[2] + (params.a_pdv.beta2 + eps_a) * f[3];
            if inner_a < 0.0 {
                *abs_clamp += 1;
            }
            let a = inner_a.abs();
            let p = (params.p_pdv.beta0 + params.p_pdv.beta1 * f[4] + (params.p_pdv.beta2 + eps_p) * f[5])
                .exp();
            SurfaceState {
                sigma,
                a,
                p,
                rho,
                eta,
                eps_a,
                eps_p,
            }
        };

        let mut states = Vec::with_capacity(config.horizon + 1);
        let f0 = features(&simple, r0 - 1);
        states.push(mk_state(&f0, eps_a, eps_p, rho, eta, &mut sigma_floor, &mut abs_clamp));

        for k in 0..config.horizon {
            let sigma_k = states[k].sigma;
            // Draw the correlated 5-vector; conditional mode pins the asset
            // coordinate to the innovation implied by the historical return.
            let z = match config.mode {
                SimulationMode::Unconditional => {
                    let u: Vec<f64> = (0..5).map(|_| standard_normal(&mut rng)).collect();
                    sampler_mix(&sampler, &u)
                }
                SimulationMode::Conditional => {
                    let r_log = (prices[r0 + k + 1] / prices[r0 + k]).ln();
                    let z_s = (r_log - (asset.mu - 0.5 * sigma_k * sigma_k) * dt) / (sigma_k * sqrt_dt);
                    sampler.sample_conditional_first(z_s, &mut rng)
                }
            };

            if config.mode == SimulationMode::Unconditional {
                let r_log = (asset.mu - 0.5 * sigma_k * sigma_k) * dt + sigma_k * sqrt_dt * z[0];
                let next_price = prices[r0 + k] * r_log.exp();
                prices.push(next_price);
                simple.push(r_log.exp_m1());
            }

            let f = features(&simple, r0 + k);
            eps_a = crate::processes::ou_step_exact(eps_a, &params.eps_a, dt, z[1]);
            eps_p = crate::processes::ou_step_exact(eps_p, &params.eps_p, dt, z[2]);
            rho = crate::processes::jacobi_step_full_truncation(rho, &params.rho, dt, z[3]);
            eta = crate::processes::jacobi_step_full_truncation(eta, &params.eta, dt, z[4]);
            states.push(mk_state(&f, eps_a, eps_p, rho, eta, &mut sigma_floor, &mut abs_clamp));
        }

        Ok(PathOutput {
            record: PathRecord { prices, states },
            sigma_floor,
            abs_clamp,
        })
    });

    let mut paths = Vec::with_capacity(config.n_paths);
    let mut sigma_floor_events = 0;
    let mut abs_clamp_events = 0;
    for out in outputs {
        let out = out?;
        sigma_floor_events += out.sigma_floor;
        abs_clamp_events += out.abs_clamp;
        paths.push(out.record);
    }
    Ok(SurfacePathSet {
        dt: config.dt,
        seed: config.seed,
        horizon: config.horizon,
        warmup_returns: config.warmup_returns,
        mode: config.mode,
        paths,
        sigma_floor_events,
        abs_clamp_events,
        correlation_repair: sampler.repair_magnitude(),
    })
}

fn sampler_mix(sampler: &CorrelatedNormals, u: &[f64]) -> Vec<f64> {
    // sample() draws internally; this helper exists for the unconditional
    // path where the draws were already taken (keeps draw order identical
    // between modes for the non-asset coordinates).
    sampler.mix_external(u)
}

/// Strike-axis specification for surface evaluation.
#[derive(Debug, Clone)]
pub enum GridAxis<'a> {
    /// Forward moneyness values, shared across maturities.
    Moneyness(&'a [f64]),
    /// Black-Scholes deltas (puts negative), shared across maturities.
    Delta(&'a [f64]),
}

/// An evaluated implied-vol grid; failed delta inversions are NaN.
#[derive(Debug, Clone)]
pub struct EvaluatedGrid {
    /// Implied vols per (maturity, axis point).
    pub vols: Vec<Vec<f64>>,
    /// Moneyness per (maturity, axis point) (equals the input for a
    /// moneyness axis, solved for a delta axis).
    pub moneyness: Vec<Vec<f64>>,
    pub newton_failures: usize,
}

/// Evaluate one state's surface on a maturity x strike grid. Delta axes are
/// inverted point by point through the state's own smile.
pub fn evaluate_surface(
    state: &SurfaceState,
    maturities: &[f64],
    axis: &GridAxis<'_>,
) -> Result<EvaluatedGrid> {
    let surf = state.pssvi()?;
    let mut vols = Vec::with_capacity(maturities.len());
    let mut moneyness = Vec::with_capacity(maturities.len());
    let mut failures = 0usize;
    for &t in maturities {
        match axis {
            GridAxis::Moneyness(ms) => {
                let row: Vec<f64> = ms
                    .iter()
                    .map(|m| surf.implied_vol(m.ln(), t).unwrap_or(f64::NAN))
                    .collect();
                moneyness.push(ms.to_vec());
                vols.push(row);
            }
            GridAxis::Delta(ds) => {
                let mut mrow = Vec::with_capacity(ds.len());
                let mut vrow = Vec::with_capacity(ds.len());
                for &d in ds.iter() {
                    match delta_to_moneyness(d, t, |k| surf.implied_vol(k, t).unwrap_or(f64::NAN)) {
                        Ok(m) => {
                            mrow.push(m);
                            vrow.push(surf.implied_vol(m.ln(), t).unwrap_or(f64::NAN));
                        }
                        Err(_) => {
                            failures += 1;
                            mrow.push(f64::NAN);
                            vrow.push(f64::NAN);
                        }
                    }
                }
                moneyness.push(mrow);
                vols.push(vrow);
            }
        }
    }
    Ok(EvaluatedGrid {
        vols,
        moneyness,
        newton_failures: failures,
    })
}
