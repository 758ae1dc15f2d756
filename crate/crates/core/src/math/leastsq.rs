//! Bounded nonlinear least squares (Levenberg–Marquardt with box
//! constraints) and a bounded Nelder–Mead simplex for non-quadratic
//! objectives.
//!
//! The LM driver minimizes `sum_i r_i(x)^2` subject to `lo <= x <= hi`,
//! with a finite-difference Jacobian and trust-region style damping.
//! Candidate steps are projected onto the box (and onto an optional
//! caller-supplied feasible set), so iterates are always feasible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Box constraints; use `f64::NEG_INFINITY` / `f64::INFINITY` for free sides.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn non_negative(n: usize) -> Self {
        Bounds {
            lo: vec![0.0; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        // Termination when the step, the projected gradient or the cost
        // reduction falls below 1e-10.
        LmOptions {
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

/// Minimize `sum r_i(x)^2` over the box, optionally re-projecting iterates
/// onto a caller-defined feasible set after every step.
pub fn levenberg_marquardt<R>(
    residuals: R,
    x0: &[f64],
    bounds: &Bounds,
    project: Option<&dyn Fn(&mut [f64])>,
    opts: &LmOptions,
) -> Result<FitResult>
where
    R: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    assert_eq!(bounds.lo.len(), n);
    assert_eq!(bounds.hi.len(), n);

    let feasible = |x: &mut Vec<f64>| {
        bounds.clamp(x);
        if let Some(p) = project {
            p(x);
            bounds.clamp(x);
        }
    };

    let mut x = x0.to_vec();
    feasible(&mut x);
    let mut r = DVector::from_vec(residuals(&x));
    let m = r.len();
    let mut cost = r.norm_squared();

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut stall_count = 0usize;
    // Plateau detection: cost at the last 25-iteration checkpoint.
    let mut checkpoint_cost = cost;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;

        let jac = fd_jacobian(&residuals, &x, &r, bounds, m);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        grad_norm = projected_grad_norm(&jtr, &x, bounds);

        if grad_norm < opts.tol {
            converged = true;
            break;
        }

        // Inner loop: raise damping until a step reduces the cost.
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)].max(1e-12);
                damped[(i, i)] += lambda * d;
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => match damped.lu().solve(&(-&jtr)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };

            let mut x_new: Vec<f64> = x
                .iter()
                .zip(step.iter())
                .map(|(xi, si)| xi + si)
                .collect();
            feasible(&mut x_new);

            let r_new = DVector::from_vec(residuals(&x_new));
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                let step_norm = x
                    .iter()
                    .zip(x_new.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                let reduction = cost - cost_new;
                let lambda_used = lambda;
                x = x_new;
                r = r_new;
                cost = cost_new;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                // Relative step / cost-reduction tests, gated against the
                // heavily damped regime where microscopic accepted steps say
                // nothing about stationarity. Ten consecutive nearly-flat
                // accepts count as practical stationarity at any damping.
                let trustable = lambda_used <= 1e2;
                let xscale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if reduction < 1e-8 * cost.max(1e-300) {
                    stall_count += 1;
                } else {
                    stall_count = 0;
                }
                if cost <= 1e-300
                    || (trustable && step_norm < opts.tol * xscale)
                    || (trustable && reduction < opts.tol * cost)
                    || stall_count >= 10
                {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }

        if !accepted {
            // No downhill step at any damping: stationary under the box.
            converged = true;
        }
        // Plateau rule: a long crawl that moved the cost by less than 0.01%
        // over 25 iterations is treated as converged (flat-valley targets).
        if iterations % 25 == 0 {
            if checkpoint_cost - cost < 1e-4 * cost {
                converged = true;
            }
            checkpoint_cost = cost;
        }
        if converged {
            break;
        }
    }

    let result = FitResult {
        x: x.clone(),
        cost,
        grad_norm,
        iterations,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::Convergence {
            iterations,
            cost,
            grad_norm,
            best: x,
        })
    }
}

fn fd_jacobian<R>(
    residuals: &R,
    x: &[f64],
    r0: &DVector<f64>,
    bounds: &Bounds,
    m: usize,
) -> DMatrix<f64>
where
    R: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = (f64::EPSILON.sqrt()) * x[j].abs().max(1e-4);
        if bounds.hi[j] - bounds.lo[j] < h {
            continue; // pinned coordinate: leave its column at zero
        }
        // Step backward when a forward step would leave the box.
        let (hj, sign) = if x[j] + h <= bounds.hi[j] {
            (h, 1.0)
        } else {
            (-h, -1.0)
        };
        xp[j] = x[j] + hj;
        let rp = residuals(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = sign * (rp[i] - r0[i]) / h;
        }
    }
    jac
}

// Zero out gradient components pointing outside the box at an active bound.
fn projected_grad_norm(jtr: &DVector<f64>, x: &[f64], bounds: &Bounds) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..x.len() {
        let g = 2.0 * jtr[i];
        let blocked_lo = x[i] <= bounds.lo[i] && g > 0.0;
        let blocked_hi = x[i] >= bounds.hi[i] && g < 0.0;
        if !(blocked_lo || blocked_hi) {
            norm = norm.max(g.abs());
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    pub tol_f: f64,
    pub tol_x: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 4000,
            tol_f: 1e-10,
            tol_x: 1e-8,
            initial_step: 0.1,
        }
    }
}

/// Bounded Nelder–Mead simplex minimization with adaptive coefficients.
///
/// Every candidate vertex is clamped into the box before evaluation, so the
/// objective is never called outside it.
pub fn nelder_mead<F>(
    objective: F,
    x0: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Result<FitResult>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    // Adaptive coefficients (scale with dimension).
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let clampv = |v: &mut Vec<f64>| bounds.clamp(v);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clampv(&mut start);
    simplex.push(start.clone());
    for j in 0..n {
        let mut v = start.clone();
        let step = if v[j].abs() > 1e-8 {
            opts.initial_step * v[j].abs()
        } else {
            opts.initial_step * 0.1
        };
        v[j] += step;
        clampv(&mut v);
        if (v[j] - start[j]).abs() < 1e-14 {
            v[j] = start[j] - step;
            clampv(&mut v);
        }
        simplex.push(v);
    }

    let mut fvals: Vec<f64> = simplex.iter().map(|v| objective(v)).collect();
    let mut evals = n + 1;

    for iter in 0..opts.max_iter {
        // Order the simplex by objective value.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap_or(std::cmp::Ordering::Equal));
        let ordered: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let fordered: Vec<f64> = idx.iter().map(|&i| fvals[i]).collect();
        simplex = ordered;
        fvals = fordered;

        let spread = fvals[n] - fvals[0];
        let diam = (0..n)
            .map(|j| {
                simplex
                    .iter()
                    .map(|v| v[j])
                    .fold(f64::NEG_INFINITY, f64::max)
                    - simplex.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max);
        if spread < opts.tol_f && diam < opts.tol_x {
            return Ok(FitResult {
                x: simplex[0].clone(),
                cost: fvals[0],
                grad_norm: f64::NAN,
                iterations: iter,
                converged: true,
            });
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for v in simplex.iter().take(n) {
            for j in 0..n {
                centroid[j] += v[j] / nf;
            }
        }

        let mk = |coef: f64, from: &[f64]| -> Vec<f64> {
            let mut v: Vec<f64> = centroid
                .iter()
                .zip(from.iter())
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clampv(&mut v);
            v
        };

        let xr = mk(alpha, &simplex[n]);
        let fr = objective(&xr);
        evals += 1;

        if fr < fvals[0] {
            let xe = mk(alpha * beta, &simplex[n]);
            let fe = objective(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                fvals[n] = fe;
            } else {
                simplex[n] = xr;
                fvals[n] = fr;
            }
        } else if fr < fvals[n - 1] {
            simplex[n] = xr;
            fvals[n] = fr;
        } else {
            let (xc, fc) = if fr < fvals[n] {
                let xc = mk(alpha * gamma, &simplex[n]);
                let fc = objective(&xc);
                (xc, fc)
            } else {
                let xc = mk(-gamma, &simplex[n]);
                let fc = objective(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < fvals[n].min(fr) {
                simplex[n] = xc;
                fvals[n] = fc;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=n {
                    let mut v: Vec<f64> = simplex[0]
                        .iter()
                        .zip(simplex[i].iter())
                        .map(|(b, w)| b + delta * (w - b))
                        .collect();
                    clampv(&mut v);
                    fvals[i] = objective(&v);
                    simplex[i] = v;
                    evals += 1;
                }
            }
        }
        let _ = evals;
    }

    // Out of budget: report the best vertex found.
    let (best, _) = fvals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap();
    Err(Error::Convergence {
        iterations: opts.max_iter,
        cost: fvals[best],
        grad_norm: f64::NAN,
        best: simplex[best].clone(),
    })
}
