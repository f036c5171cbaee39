//! Node-parallel loops. With the `parallel` feature these run on the rayon
//! pool; without it they fall back to plain sequential iteration.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fill `out` in chunks of `width` values, one chunk per grid node.
pub fn for_each_node<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(width)
        .enumerate()
        .for_each(|(node, chunk)| f(node, chunk));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(node, chunk)| f(node, chunk));
}

/// Maximum of `f(node)` over `0..count`; returns `f64::NEG_INFINITY` when empty.
pub fn max_over<F>(count: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count)
            .into_par_iter()
            .map(f)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Minimum of `f(node)` over `0..count`; returns `f64::INFINITY` when empty.
pub fn min_over<F>(count: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    -max_over(count, |i| -f(i))
}

/// Map over an index range, collecting results in order.
pub fn map_collect<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}
