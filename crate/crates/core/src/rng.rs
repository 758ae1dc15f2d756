//! Reproducible random streams and correlated Gaussian sampling.
//!
//! All randomness in a run flows from one `u64` seed. Each Monte Carlo path
//! gets its own counter-based ChaCha stream, so draws are independent across
//! paths and independent of scheduling order or worker count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// RNG for one path: seed selects the run, stream selects the path.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sampler for correlated standard normal vectors.
///
/// Holds the lower-triangular Cholesky factor of a (repaired) correlation
/// matrix. The first coordinate maps to the first independent draw
/// unchanged, which allows conditioning on it (used when simulating the
/// surface conditionally on an observed asset path).
#[derive(Debug, Clone)]
pub struct CorrelatedNormals {
    factor: DMatrix<f64>,
    dim: usize,
    repair_magnitude: f64,
}

impl CorrelatedNormals {
    /// Build from a symmetric unit-diagonal matrix. Non-PSD inputs are
    /// repaired by clipping negative eigenvalues at zero and rescaling the
    /// diagonal back to one; the largest entrywise adjustment is reported.
    pub fn new(corr: &DMatrix<f64>) -> Result<Self> {
        let n = corr.nrows();
        if corr.ncols() != n {
            return Err(Error::validation("correlation matrix must be square"));
        }
        for i in 0..n {
            if (corr[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::validation(format!(
                    "correlation matrix must have unit diagonal (entry {i} is {})",
                    corr[(i, i)]
                )));
            }
            for j in 0..i {
                if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-10 {
                    return Err(Error::validation("correlation matrix must be symmetric"));
                }
                if corr[(i, j)].abs() > 1.0 + 1e-10 {
                    return Err(Error::validation("correlation entries must lie in [-1, 1]"));
                }
            }
        }

        let (repaired, magnitude) = repair_psd(corr);
        let factor = cholesky_with_jitter(&repaired).ok_or_else(|| {
            Error::numerical("correlation matrix not positive semi-definite after repair")
        })?;
        Ok(CorrelatedNormals {
            factor,
            dim: n,
            repair_magnitude: magnitude,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest entrywise change the PSD repair applied (0 for PSD inputs).
    pub fn repair_magnitude(&self) -> f64 {
        self.repair_magnitude
    }

    /// Draw one correlated vector.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let u: Vec<f64> = (0..self.dim).map(|_| standard_normal(rng)).collect();
        self.mix_external(&u)
    }

    /// Draw a correlated vector conditioned on the first coordinate being
    /// exactly `z0`; the remaining independent draws are taken from `rng`.
    pub fn sample_conditional_first(&self, z0: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let mut u: Vec<f64> = (0..self.dim).map(|_| standard_normal(rng)).collect();
        u[0] = z0;
        self.mix_external(&u)
    }

    /// Apply the factor to caller-supplied independent standard normals.
    pub fn mix_external(&self, u: &[f64]) -> Vec<f64> {
        let uv = DVector::from_row_slice(u);
        let z = &self.factor * uv;
        z.iter().copied().collect()
    }
}

fn repair_psd(corr: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = nalgebra::SymmetricEigen::new(corr.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig >= -1e-12 {
        return (corr.clone(), 0.0);
    }
    let n = corr.nrows();
    let clipped = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.max(0.0)));
    let mut fixed = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    // Rescale to unit diagonal.
    let scales: Vec<f64> = (0..n).map(|i| fixed[(i, i)].max(1e-300).sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            fixed[(i, j)] /= scales[i] * scales[j];
        }
    }
    let magnitude = (&fixed - corr).abs().max();
    (fixed, magnitude)
}

fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut jitter = 0.0;
    for _ in 0..6 {
        let mut trial = m.clone();
        for i in 0..n {
            trial[(i, i)] += jitter;
        }
        if let Some(ch) = trial.cholesky() {
            return Some(ch.l());
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
    }
    None
}
