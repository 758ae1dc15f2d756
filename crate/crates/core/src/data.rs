//! Market data containers and ingestion: index price series,
//! implied-volatility grids, calendar-arbitrage filtering and
//! train/test splitting.
//!
//! CSV conventions: UTF-8, comma separated, `.` decimal point, mandatory
//! header row, dates as `YYYY-MM-DD`. Maturities are integer months in
//! files and year fractions in memory. Consecutive price rows are treated
//! as consecutive business days with a fixed step of 1/252 years.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DEFAULT_DT;
use crate::ssvi::moneyness_from_delta_vol;

/// Daily index closes on strictly increasing business days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
    /// Year fraction per step.
    pub dt: f64,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<f64>) -> Result<Self> {
        if dates.len() != closes.len() || dates.is_empty() {
            return Err(Error::validation("dates and closes must have equal nonzero length"));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::validation(format!(
                    "dates must be strictly increasing ({} follows {})",
                    w[1], w[0]
                )));
            }
        }
        if let Some((i, &c)) = closes.iter().enumerate().find(|(_, &c)| !(c > 0.0)) {
            return Err(Error::validation(format!(
                "close at {} must be positive, got {c}",
                dates[i]
            )));
        }
        Ok(PriceSeries {
            dates,
            closes,
            dt: DEFAULT_DT,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Simple returns `(S_i - S_{i-1}) / S_{i-1}`; entry `i` is the return
    /// realized over the step ending at `dates[i+1]`.
    pub fn simple_returns(&self) -> Vec<f64> {
        self.closes
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0])
            .collect()
    }

    /// Log returns `ln(S_i / S_{i-1})`, aligned like `simple_returns`.
    pub fn log_returns(&self) -> Vec<f64> {
        self.closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
    }

    /// Index of `date` in the series.
    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// Strike axis convention of a volatility grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisKind {
    /// Forward moneyness `m = K / F` (log-strike `k = ln m`).
    Moneyness,
    /// Black-Scholes call/put delta (puts negative).
    BsDelta,
}

impl std::str::FromStr for AxisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moneyness" => Ok(AxisKind::Moneyness),
            "delta" | "bs-delta" => Ok(AxisKind::BsDelta),
            other => Err(Error::validation(format!(
                "unknown axis kind '{other}' (expected 'moneyness' or 'delta')"
            ))),
        }
    }
}

/// One day's implied-volatility grid: per maturity, an axis row and a vol row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvsGrid {
    pub date: NaiveDate,
    /// Maturities in years, strictly increasing.
    pub maturities: Vec<f64>,
    pub axis: AxisKind,
    /// Axis values per maturity row.
    pub axis_values: Vec<Vec<f64>>,
    /// Implied vols per maturity row, aligned with `axis_values`.
    pub vols: Vec<Vec<f64>>,
}

impl IvsGrid {
    pub fn validate(&self) -> Result<()> {
        if self.maturities.is_empty()
            || self.maturities.len() != self.axis_values.len()
            || self.maturities.len() != self.vols.len()
        {
            return Err(Error::validation(format!(
                "grid {}: maturities, axis rows and vol rows must align",
                self.date
            )));
        }
        if !self.maturities.windows(2).all(|w| w[1] > w[0]) || self.maturities[0] <= 0.0 {
            return Err(Error::validation(format!(
                "grid {}: maturities must be positive and strictly increasing",
                self.date
            )));
        }
        for (i, (axis, vols)) in self.axis_values.iter().zip(self.vols.iter()).enumerate() {
            if axis.len() != vols.len() || axis.is_empty() {
                return Err(Error::validation(format!(
                    "grid {} maturity row {i}: axis and vols must align and be nonempty",
                    self.date
                )));
            }
            if let Some(&v) = vols.iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::validation(format!(
                    "grid {} maturity row {i}: implied vol must be positive, got {v}",
                    self.date
                )));
            }
            if self.axis == AxisKind::Moneyness && !axis.windows(2).all(|w| w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "grid {} maturity row {i}: moneyness values must be strictly increasing",
                    self.date
                )));
            }
        }
        Ok(())
    }

    /// ATM vol per maturity, linearly interpolated in log-moneyness
    /// (moneyness axis only).
    pub fn atm_vols(&self) -> Result<Vec<f64>> {
        if self.axis != AxisKind::Moneyness {
            return Err(Error::validation("ATM extraction requires a moneyness grid"));
        }
        let mut out = Vec::with_capacity(self.maturities.len());
        for (axis, vols) in self.axis_values.iter().zip(self.vols.iter()) {
            out.push(interp_at(axis, vols, 1.0));
        }
        Ok(out)
    }

    /// Convert a delta-axis grid to forward moneyness, point by point through
    /// the closed form (each quote carries its own vol). Rows are re-sorted
    /// by the resulting moneyness.
    pub fn to_moneyness(&self) -> Result<IvsGrid> {
        if self.axis == AxisKind::Moneyness {
            return Ok(self.clone());
        }
        let mut axis_values = Vec::with_capacity(self.maturities.len());
        let mut vols = Vec::with_capacity(self.maturities.len());
        for ((t, axis), vrow) in self
            .maturities
            .iter()
            .zip(self.axis_values.iter())
            .zip(self.vols.iter())
        {
            let mut pts: Vec<(f64, f64)> = axis
                .iter()
                .zip(vrow.iter())
                .map(|(&d, &v)| moneyness_from_delta_vol(d, *t, v).map(|m| (m, v)))
                .collect::<Result<_>>()?;
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            axis_values.push(pts.iter().map(|p| p.0).collect());
            vols.push(pts.iter().map(|p| p.1).collect());
        }
        let grid = IvsGrid {
            date: self.date,
            maturities: self.maturities.clone(),
            axis: AxisKind::Moneyness,
            axis_values,
            vols,
        };
        grid.validate()?;
        Ok(grid)
    }
}

fn interp_at(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v < x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// A dated sequence of IVS grids with its companion price series and a
/// train/test boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IvsPanel {
    pub grids: Vec<IvsGrid>,
    pub prices: PriceSeries,
    pub boundary: NaiveDate,
}

impl IvsPanel {
    pub fn new(grids: Vec<IvsGrid>, prices: PriceSeries, boundary: NaiveDate) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::validation("panel needs at least one grid"));
        }
        let mats = &grids[0].maturities;
        for g in &grids {
            g.validate()?;
            if &g.maturities != mats {
                return Err(Error::validation(format!(
                    "grid {} has a different maturity set from the first grid",
                    g.date
                )));
            }
            if prices.position(g.date).is_none() {
                return Err(Error::validation(format!(
                    "grid date {} missing from the price series",
                    g.date
                )));
            }
        }
        for w in grids.windows(2) {
            if w[1].date <= w[0].date {
                return Err(Error::validation("grid dates must be strictly increasing"));
            }
        }
        let first = grids[0].date;
        let last = grids[grids.len() - 1].date;
        if boundary < first || boundary > last {
            return Err(Error::validation(format!(
                "boundary {boundary} outside the panel date range [{first}, {last}]"
            )));
        }
        Ok(IvsPanel {
            grids,
            prices,
            boundary,
        })
    }

    /// Split into train (dates <= boundary) and test (dates > boundary)
    /// panels. The full price history is retained on both sides for feature
    /// warm-up. The test panel may be empty (returned as `None`).
    pub fn split(&self, boundary: NaiveDate) -> Result<(IvsPanel, Option<IvsPanel>)> {
        let first = self.grids[0].date;
        let last = self.grids[self.grids.len() - 1].date;
        if boundary < first || boundary > last {
            return Err(Error::validation(format!(
                "boundary {boundary} outside the panel date range [{first}, {last}]"
            )));
        }
        let train: Vec<IvsGrid> = self
            .grids
            .iter()
            .filter(|g| g.date <= boundary)
            .cloned()
            .collect();
        let test: Vec<IvsGrid> = self
            .grids
            .iter()
            .filter(|g| g.date > boundary)
            .cloned()
            .collect();
        if train.is_empty() {
            return Err(Error::validation("boundary leaves the train set empty"));
        }
        let train_panel = IvsPanel::new(train, self.prices.clone(), boundary)?;
        let test_panel = if test.is_empty() {
            None
        } else {
            let b = test[test.len() - 1].date;
            Some(IvsPanel::new(test, self.prices.clone(), b)?)
        };
        Ok((train_panel, test_panel))
    }
}

/// Dates removed by the calendar-arbitrage filter, with the offending
/// maturity pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemovedDate {
    pub date: NaiveDate,
    pub maturity_low: f64,
    pub maturity_high: f64,
}

/// Remove every date whose linearly interpolated total-variance curves of
/// two adjacent maturities cross on the overlap of their moneyness ranges.
///
/// A date is removed when the higher-maturity total variance falls strictly
/// below the lower-maturity one somewhere on the shared log-strike range;
/// tangency alone does not remove a date. Delta-axis grids are converted to
/// moneyness first.
pub fn filter_calendar_arbitrage(panel: &IvsPanel) -> Result<(IvsPanel, Vec<RemovedDate>)> {
    let mut kept = Vec::with_capacity(panel.grids.len());
    let mut removed = Vec::new();
    for grid in &panel.grids {
        let g = grid.to_moneyness()?;
        match first_crossing(&g) {
            Some((lo, hi)) => removed.push(RemovedDate {
                date: g.date,
                maturity_low: lo,
                maturity_high: hi,
            }),
            None => kept.push(grid.clone()),
        }
    }
    if kept.is_empty() {
        return Err(Error::validation(
            "calendar-arbitrage filter removed every date in the panel",
        ));
    }
    let boundary = panel.boundary.min(kept[kept.len() - 1].date).max(kept[0].date);
    Ok((IvsPanel::new(kept, panel.prices.clone(), boundary)?, removed))
}

/// Check one moneyness grid for a calendar crossing between adjacent
/// maturities; returns the first offending maturity pair.
pub fn first_crossing(grid: &IvsGrid) -> Option<(f64, f64)> {
    const TOL: f64 = 1e-12;
    for i in 0..grid.maturities.len() - 1 {
        let (t0, t1) = (grid.maturities[i], grid.maturities[i + 1]);
        let k0: Vec<f64> = grid.axis_values[i].iter().map(|m| m.ln()).collect();
        let k1: Vec<f64> = grid.axis_values[i + 1].iter().map(|m| m.ln()).collect();
        let w0: Vec<f64> = grid.vols[i].iter().map(|v| v * v * t0).collect();
        let w1: Vec<f64> = grid.vols[i + 1].iter().map(|v| v * v * t1).collect();

        let lo = k0[0].max(k1[0]);
        let hi = k0[k0.len() - 1].min(k1[k1.len() - 1]);
        if lo >= hi {
            continue; // no overlap to compare on
        }
        // Both interpolants are piecewise linear, so their difference is
        // linear between union knots: negativity anywhere implies
        // negativity at a union knot.
        let mut knots: Vec<f64> = k0
            .iter()
            .chain(k1.iter())
            .copied()
            .filter(|&k| k >= lo && k <= hi)
            .collect();
        knots.push(lo);
        knots.push(hi);
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &k in &knots {
            let wa = interp_at(&k0, &w0, k);
            let wb = interp_at(&k1, &w1, k);
            if wb < wa - TOL {
                return Some((t0, t1));
            }
        }
    }
    None
}

/// Load a `date,close` CSV into a validated price series.
pub fn load_price_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record?;
        let parse = |field: usize, what: &str| -> Result<&str> {
            record.get(field).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("missing {what} column"),
            })
        };
        let date: NaiveDate = parse(0, "date")?.parse().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("bad date: {e}"),
        })?;
        let close: f64 = parse(1, "close")?.parse().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("bad close: {e}"),
        })?;
        rows.push((date, close));
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[1].0 == w[0].0 {
            return Err(Error::validation(format!(
                "duplicate date {} in {}",
                w[0].0,
                path.display()
            )));
        }
    }
    PriceSeries::new(
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
    )
}

/// Write a price series back to `date,close` CSV. Floats are written with
/// shortest round-trip formatting, so save/load is value-exact.
pub fn save_price_csv(series: &PriceSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("date,close\n");
    for (d, c) in series.dates.iter().zip(series.closes.iter()) {
        let _ = writeln!(out, "{d},{c}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a `date,maturity_months,axis_value,implied_vol` CSV into per-date
/// grids. Rows may arrive in any order; they are grouped by date and sorted
/// by (maturity, axis value). All dates must share one maturity set.
pub fn load_ivs_csv(path: impl AsRef<Path>, axis: AxisKind) -> Result<Vec<IvsGrid>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;

    let mut by_date: BTreeMap<NaiveDate, BTreeMap<u32, Vec<(f64, f64)>>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let field = |idx: usize, what: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("missing {what} column"),
            })
        };
        let perr = |what: &str, e: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("bad {what}: {e}"),
        };
        let date: NaiveDate = field(0, "date")?
            .parse()
            .map_err(|e: chrono::ParseError| perr("date", e.to_string()))?;
        let months: u32 = field(1, "maturity_months")?
            .parse()
            .map_err(|e: std::num::ParseIntError| perr("maturity_months", e.to_string()))?;
        let axis_value: f64 = field(2, "axis_value")?
            .parse()
            .map_err(|e: std::num::ParseFloatError| perr("axis_value", e.to_string()))?;
        let vol: f64 = field(3, "implied_vol")?
            .parse()
            .map_err(|e: std::num::ParseFloatError| perr("implied_vol", e.to_string()))?;
        if !(vol > 0.0) {
            return Err(Error::validation(format!(
                "implied vol must be positive at {}:{line} (got {vol})",
                path.display()
            )));
        }
        if months == 0 {
            return Err(Error::validation(format!(
                "maturity_months must be >= 1 at {}:{line}",
                path.display()
            )));
        }
        by_date
            .entry(date)
            .or_default()
            .entry(months)
            .or_default()
            .push((axis_value, vol));
    }
    if by_date.is_empty() {
        return Err(Error::validation(format!("{} contains no rows", path.display())));
    }

    let first_months: Vec<u32> = by_date.values().next().unwrap().keys().copied().collect();
    let mut grids = Vec::with_capacity(by_date.len());
    for (date, rows) in by_date {
        let months: Vec<u32> = rows.keys().copied().collect();
        if months != first_months {
            return Err(Error::validation(format!(
                "maturity set on {date} differs from the first date"
            )));
        }
        let mut axis_values = Vec::with_capacity(rows.len());
        let mut vols = Vec::with_capacity(rows.len());
        for (_, mut pts) in rows {
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            axis_values.push(pts.iter().map(|p| p.0).collect());
            vols.push(pts.iter().map(|p| p.1).collect());
        }
        let grid = IvsGrid {
            date,
            maturities: first_months.iter().map(|&m| m as f64 / 12.0).collect(),
            axis,
            axis_values,
            vols,
        };
        grid.validate()?;
        grids.push(grid);
    }
    Ok(grids)
}

/// Write grids in the long CSV format read by [`load_ivs_csv`].
pub fn save_ivs_csv(grids: &[IvsGrid], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("date,maturity_months,axis_value,implied_vol\n");
    for g in grids {
        for ((t, axis), vols) in g.maturities.iter().zip(&g.axis_values).zip(&g.vols) {
            let months = (t * 12.0).round() as u32;
            for (a, v) in axis.iter().zip(vols.iter()) {
                let _ = writeln!(out, "{},{months},{a},{v}", g.date);
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
