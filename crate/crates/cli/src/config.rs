//! Flag / config-file resolution.
//!
//! Precedence: command-line flags > JSON config file > built-in defaults.
//! The effective configuration is echoed into the output directory as
//! `config.json` so a run can be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ivsim::error::{Error, Result};

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Index price CSV (`date,close`).
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// IVS CSV (`date,maturity_months,axis_value,implied_vol`).
    #[arg(long)]
    pub ivs: Option<PathBuf>,
    /// Strike axis of the IVS file: `moneyness` or `delta`.
    #[arg(long)]
    pub axis: Option<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed (required for simulate).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Simulation horizon in business days.
    #[arg(long)]
    pub horizon_days: Option<usize>,
    /// Worker threads (default: hardware parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Simulation mode: `conditional` or `unconditional`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Hyperparameter JSON file.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Hyperparameter grid JSON file (enables cross-validation).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Train/test boundary date (YYYY-MM-DD).
    #[arg(long)]
    pub boundary: Option<String>,
    /// Joint-model parameter JSON (for simulate).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Surface shape for fit-ssvi: `heston-like`, `power-law`,
    /// `modified-power-law` or `parsimonious`.
    #[arg(long)]
    pub variant: Option<String>,
    /// Simulated path states CSV (for validate).
    #[arg(long)]
    pub paths_csv: Option<PathBuf>,
    /// Diagnostic for validate: `pca`, `envelopes`, `lagcorr` or `density`.
    #[arg(long)]
    pub what: Option<String>,
    /// Maturity in months for single-maturity diagnostics.
    #[arg(long)]
    pub maturity_months: Option<u32>,
    /// Quantile levels, comma separated (e.g. `0.005,0.995`).
    #[arg(long)]
    pub quantiles: Option<String>,
    /// Maximum lag for lag-correlation diagnostics.
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Confidence level for correlation intervals.
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Feature regression JSON (for the density export).
    #[arg(long)]
    pub pdv: Option<PathBuf>,
    /// Export the gridded IVS for the first N paths of a simulation.
    #[arg(long)]
    pub ivs_paths: Option<usize>,
    /// Step stride for the gridded IVS export.
    #[arg(long)]
    pub ivs_stride: Option<usize>,
    /// Number of returns of the price history reserved as feature warm-up.
    #[arg(long)]
    pub warmup_returns: Option<usize>,
    /// Include residual series in calibration reports.
    #[arg(long, default_value_t = false)]
    pub residuals: bool,
}

/// Config-file schema: a subset of the flags, all optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub prices: Option<PathBuf>,
    pub ivs: Option<PathBuf>,
    pub axis: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub horizon_days: Option<usize>,
    pub threads: Option<usize>,
    pub mode: Option<String>,
    pub hyper: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub boundary: Option<String>,
    pub params: Option<PathBuf>,
    pub variant: Option<String>,
    pub maturities_months: Option<Vec<u32>>,
    pub moneyness: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub warmup_returns: Option<usize>,
}

/// Fully resolved configuration for one command run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub prices: Option<PathBuf>,
    pub ivs: Option<PathBuf>,
    pub axis: String,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub paths: usize,
    pub horizon_days: usize,
    pub threads: Option<usize>,
    pub mode: String,
    pub hyper: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub boundary: Option<String>,
    pub params: Option<PathBuf>,
    pub variant: String,
    pub paths_csv: Option<PathBuf>,
    pub what: Option<String>,
    pub maturity_months: u32,
    pub quantiles: Vec<f64>,
    pub max_lag: usize,
    pub confidence: f64,
    pub pdv: Option<PathBuf>,
    pub ivs_paths: usize,
    pub ivs_stride: usize,
    pub warmup_returns: Option<usize>,
    pub residuals: bool,
    /// Evaluation lattice for simulated surfaces.
    pub maturities_months: Vec<u32>,
    pub moneyness: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl RunConfig {
    pub fn resolve(command: &str, args: &CommonArgs) -> Result<RunConfig> {
        let file: FileConfig = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text)?
            }
            None => FileConfig::default(),
        };

        let out = args
            .out
            .clone()
            .or(file.out.clone())
            .ok_or_else(|| Error::validation("--out is required"))?;
        std::fs::create_dir_all(&out)?;

        let quantiles: Vec<f64> = match &args.quantiles {
            Some(q) => q
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::validation(format!("bad quantile '{s}': {e}")))
                })
                .collect::<Result<_>>()?,
            None => vec![0.005, 0.995],
        };

        let config = RunConfig {
            command: command.to_string(),
            prices: args.prices.clone().or(file.prices),
            ivs: args.ivs.clone().or(file.ivs),
            axis: args.axis.clone().or(file.axis).unwrap_or_else(|| "moneyness".into()),
            out,
            seed: args.seed.or(file.seed),
            paths: args.paths.or(file.paths).unwrap_or(1000),
            horizon_days: args.horizon_days.or(file.horizon_days).unwrap_or(504),
            threads: args.threads.or(file.threads),
            mode: args.mode.clone().or(file.mode).unwrap_or_else(|| "unconditional".into()),
            hyper: args.hyper.clone().or(file.hyper),
            grid: args.grid.clone().or(file.grid),
            boundary: args.boundary.clone().or(file.boundary),
            params: args.params.clone().or(file.params),
            variant: args
                .variant
                .clone()
                .or(file.variant)
                .unwrap_or_else(|| "parsimonious".into()),
            paths_csv: args.paths_csv.clone(),
            what: args.what.clone(),
            maturity_months: args.maturity_months.unwrap_or(1),
            quantiles,
            max_lag: args.max_lag.unwrap_or(100),
            confidence: args.confidence.unwrap_or(0.95),
            pdv: args.pdv.clone(),
            ivs_paths: args.ivs_paths.unwrap_or(0),
            ivs_stride: args.ivs_stride.unwrap_or(1).max(1),
            warmup_returns: args.warmup_returns.or(file.warmup_returns),
            residuals: args.residuals,
            maturities_months: file
                .maturities_months
                .unwrap_or_else(|| (1..=24).collect()),
            moneyness: file
                .moneyness
                .unwrap_or_else(|| (0..=80).map(|i| 0.6 + 0.01 * i as f64).collect()),
            deltas: file.deltas.unwrap_or_else(|| {
                let mut d: Vec<f64> = (2..=9).map(|i| -0.05 * i as f64).collect();
                d.extend((2..=9).map(|i| 0.05 * i as f64));
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                d
            }),
        };
        Ok(config)
    }

    /// Install the rayon thread pool when a worker count was requested.
    /// Results are identical for any count; this only affects wall time.
    pub fn apply_thread_pool(&self) {
        #[cfg(feature = "parallel")]
        if let Some(n) = self.threads {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }

    /// Write the effective configuration next to the outputs.
    pub fn echo_effective(&self) -> Result<()> {
        let path = self.out.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn require_prices(&self) -> Result<&Path> {
        self.prices
            .as_deref()
            .ok_or_else(|| Error::validation("--prices is required for this command"))
    }

    pub fn require_ivs(&self) -> Result<&Path> {
        self.ivs
            .as_deref()
            .ok_or_else(|| Error::validation("--ivs is required for this command"))
    }

    pub fn require_boundary(&self) -> Result<chrono::NaiveDate> {
        let s = self
            .boundary
            .as_deref()
            .ok_or_else(|| Error::validation("--boundary is required for this command"))?;
        s.parse()
            .map_err(|e| Error::validation(format!("bad boundary date '{s}': {e}")))
    }

    pub fn maturities_years(&self) -> Vec<f64> {
        self.maturities_months
            .iter()
            .map(|&m| m as f64 / 12.0)
            .collect()
    }
}
