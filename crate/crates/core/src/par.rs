//! Data-parallel execution shim.
//!
//! The hot loops (Monte Carlo paths, per-date calibrations, cross-validation
//! cells) are all embarrassingly parallel maps over an index range. With the
//! `parallel` feature (default) they run on rayon; without it they fall back
//! to plain sequential iteration. Results are collected in index order, so
//! output is identical for any worker count.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept as the benchmark baseline.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
