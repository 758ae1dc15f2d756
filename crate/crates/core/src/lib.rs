//! Joint calibration and Monte Carlo simulation of an equity index and its
//! implied-volatility surface.
//!
//! The library is organized around a pipeline:
//!
//! 1. [`data`] — ingest price series and implied-vol grids, filter dates with
//!    calendar-spread arbitrage, split train/test.
//! 2. [`features`] / [`pdv`] — build kernel-weighted return features and
//!    calibrate the feature regression for any volatility-like target.
//! 3. [`ssvi`] — evaluate and daily-calibrate the total-variance surface
//!    parameterizations, with static-arbitrage checks.
//! 4. [`processes`] — estimate and step the mean-reverting residual and
//!    bounded-state processes.
//! 5. [`jointmodel`] — wire everything into the joint dynamics: full
//!    historical calibration and (conditional or unconditional) simulation
//!    of arbitrage-free surface paths.
//! 6. [`validation`] — the evaluation battery: PCA of surface log-variations,
//!    quantile envelopes, lag correlations, joint-density exports.
//!
//! Hot loops parallelize with rayon under the `parallel` feature (default);
//! disabling it yields a fully sequential build with identical outputs.

pub mod data;
pub mod error;
pub mod features;
pub mod jointmodel;
pub mod math;
pub mod par;
pub mod pdv;
pub mod processes;
pub mod rng;
pub mod ssvi;
pub mod validation;

pub use error::{Error, Result};
