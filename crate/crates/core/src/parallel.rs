//! Thin fan-out helpers gated on the `parallel` feature.
//!
//! Every helper hands each logical index to exactly one closure invocation
//! that owns its output slot, and the closure's internal arithmetic order is
//! fixed, so results are bitwise-identical whether the work runs on rayon or
//! on the current thread. Keep reductions (dot products, accumulators) out of
//! these helpers: reordered floating-point sums would break that guarantee.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f(i, chunk_i)` to consecutive `chunk`-sized pieces of `data`
/// (rows of a row-major matrix).
#[cfg(feature = "parallel")]
pub(crate) fn for_each_chunk<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_chunk<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Collect `f(0), ..., f(n-1)` in index order.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`] with a runtime opt-in: cell-level
/// training is sequential unless the caller asked for parallelism (and the
/// feature is enabled). The first error wins; outputs stay in index order.
pub(crate) fn try_map_indexed<T, E, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}
