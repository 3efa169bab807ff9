//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature the maps run on rayon; without it
//! they run on plain iterators. Both paths must produce identical bytes:
//! every mapped item depends only on its own index, and reductions combine
//! partial results in index order with a fixed chunk size, so the floating
//! point summation order never depends on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use std::ops::Range;

/// Fixed chunk size for order-stable reductions.
pub const CHUNK: usize = 32;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over `0..n` in fixed-size index ranges, collecting the per-chunk
/// results in chunk order. Callers fold the returned values sequentially so
/// the combination order is independent of the execution order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(n))
        .collect();
    #[cfg(feature = "parallel")]
    {
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn map_chunks_covers_every_index_once() {
        let chunks = map_chunks(103, CHUNK, |r| r.collect::<Vec<_>>());
        let flat: Vec<usize> = chunks.into_iter().flatten().collect();
        assert_eq!(flat, (0..103).collect::<Vec<_>>());
    }
}
