//! Data-parallel helpers with a sequential fallback.
//!
//! Every hot loop in the crate routes through these wrappers so that the
//! `parallel` feature can be dropped for single-threaded builds without
//! touching call sites. Reductions collect ordered per-chunk partials and
//! combine them sequentially, so results are identical (bit for bit) with
//! and without the feature enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size used for deterministic reductions.
pub const REDUCE_CHUNK: usize = 1024;

/// Runs `f(row_index, row)` over mutable row slices of a row-major buffer.
#[cfg(feature = "parallel")]
pub fn for_each_row_mut<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    data.par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
}

/// Runs `f(row_index, row)` over mutable row slices of a row-major buffer.
#[cfg(not(feature = "parallel"))]
pub fn for_each_row_mut<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
}

/// Maps `f` over fixed-size chunks of `items` and returns the per-chunk
/// results in chunk order.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync,
{
    items
        .par_chunks(chunk)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

/// Maps `f` over fixed-size chunks of `items` and returns the per-chunk
/// results in chunk order.
#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync,
{
    items
        .chunks(chunk)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

/// Maps `f` over indices `0..n`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over indices `0..n`, returning results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    (0..n).map(f).collect()
}
