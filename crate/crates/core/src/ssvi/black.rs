//! Black-Scholes utilities in forward-moneyness form.
//!
//! All prices are undiscounted and normalized by the forward (zero rates and
//! dividends), so a call is worth `N(d1) - m N(d2)` with `m = K/F`,
//! `d1 = (-ln m + sigma^2 T / 2) / (sigma sqrt(T))` and `d2 = d1 - sigma sqrt(T)`.

use crate::error::{Error, Result};
use crate::math::{brent, newton_bisect, norm_cdf, norm_inv};

/// Undiscounted call price in units of forward for forward moneyness `m`.
pub fn bs_call_price(m: f64, t: f64, sigma: f64) -> f64 {
    debug_assert!(m > 0.0 && t > 0.0 && sigma >= 0.0);
    let st = sigma * t.sqrt();
    if st < 1e-14 {
        return (1.0 - m).max(0.0);
    }
    let d1 = (-m.ln() + 0.5 * st * st) / st;
    norm_cdf(d1) - m * norm_cdf(d1 - st)
}

/// Forward delta `eps * N(eps * d1)` with `eps = +1` for calls, `-1` for puts.
pub fn bs_delta(m: f64, t: f64, sigma: f64, is_call: bool) -> f64 {
    debug_assert!(m > 0.0 && t > 0.0 && sigma > 0.0);
    let st = sigma * t.sqrt();
    let d1 = (-m.ln() + 0.5 * st * st) / st;
    let eps = if is_call { 1.0 } else { -1.0 };
    eps * norm_cdf(eps * d1)
}

/// Moneyness of the quote with the given delta and implied volatility
/// (closed form through the normal quantile). Put deltas are negative.
pub fn moneyness_from_delta_vol(delta: f64, t: f64, sigma: f64) -> Result<f64> {
    if !(t > 0.0 && sigma > 0.0) {
        return Err(Error::validation("moneyness_from_delta_vol requires t, sigma > 0"));
    }
    let d1 = if delta > 0.0 && delta < 1.0 {
        norm_inv(delta)
    } else if delta > -1.0 && delta < 0.0 {
        -norm_inv(-delta)
    } else {
        return Err(Error::validation(format!(
            "delta must be in (0,1) for calls or (-1,0) for puts, got {delta}"
        )));
    };
    let st = sigma * t.sqrt();
    Ok((0.5 * st * st - d1 * st).exp())
}

/// Invert `bs_delta` against a full smile: find `m` such that the
/// Black-Scholes delta computed with the smile's own vol at `ln m` equals
/// `target_delta`. Safeguarded Newton on `ln m` with a bisection fallback,
/// bracket `m` in `[1e-3, 1e3]`, delta tolerance 1e-10.
pub fn delta_to_moneyness<F>(target_delta: f64, t: f64, vol_at_k: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (is_call, call_target) = if target_delta > 0.0 && target_delta < 1.0 {
        (true, target_delta)
    } else if target_delta > -1.0 && target_delta < 0.0 {
        // Zero-rate parity: put delta = call delta - 1.
        (false, target_delta + 1.0)
    } else {
        return Err(Error::validation(format!(
            "target delta must be in (0,1) or (-1,0), got {target_delta}"
        )));
    };
    let _ = is_call;

    let f = |x: f64| {
        let m = x.exp();
        let sigma = vol_at_k(x).max(1e-12);
        bs_delta(m, t, sigma, true) - call_target
    };
    let lo = (1e-3f64).ln();
    let hi = (1e3f64).ln();
    // Flat-vol initial guess from the ATM vol.
    let sigma0 = vol_at_k(0.0).max(1e-12);
    let x0 = moneyness_from_delta_vol(call_target, t, sigma0)?.ln().clamp(lo, hi);
    let x = newton_bisect(f, lo, hi, x0, 1e-10, 200).map_err(|e| {
        Error::numerical(format!("delta inversion failed for delta {target_delta}: {e}"))
    })?;
    Ok(x.exp())
}

/// Implied volatility from an undiscounted normalized call price.
///
/// The price must lie strictly inside the static no-arbitrage band
/// `((1-m)^+, 1)`.
pub fn implied_vol_from_price(price: f64, m: f64, t: f64) -> Result<f64> {
    if !(m > 0.0 && t > 0.0) {
        return Err(Error::validation("implied_vol_from_price requires m, t > 0"));
    }
    let intrinsic = (1.0 - m).max(0.0);
    if price <= intrinsic || price >= 1.0 {
        return Err(Error::validation(format!(
            "price {price} outside the no-arbitrage band ({intrinsic}, 1)"
        )));
    }
    let f = |sigma: f64| bs_call_price(m, t, sigma) - price;
    // Price is strictly increasing in sigma; expand the bracket upward if a
    // very deep smile is quoted.
    let mut hi = 5.0;
    while f(hi) < 0.0 && hi < 500.0 {
        hi *= 2.0;
    }
    brent(f, 1e-9, hi, 1e-14, 300).map_err(|e| {
        Error::numerical(format!("implied vol inversion failed at m={m}, t={t}: {e}"))
    })
}
