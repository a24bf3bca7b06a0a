//! Chunked data-parallel helpers.
//!
//! Work is split into fixed-size chunks of rows. Chunk results are returned in
//! chunk order and reductions are done sequentially over that order, so the
//! output is bit-identical with or without the `parallel` feature and for any
//! number of worker threads.

use std::ops::Range;

/// Rows per chunk for particle-level kernels.
pub const CHUNK: usize = 256;

fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Applies `f` to each chunk of `0..n` and returns the results in chunk order.
pub fn map_chunks<R, F>(n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    let ranges = chunk_ranges(n, chunk);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Applies `f` to each index and collects in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let out = map_chunks(1000, 256, |r| (r.start, r.end));
        assert_eq!(out, vec![(0, 256), (256, 512), (512, 768), (768, 1000)]);
        assert!(map_chunks(0, 256, |r| r.len()).is_empty());
    }

    #[test]
    fn indices_preserve_order() {
        let out = map_indices(10, |i| i * i);
        assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
    }
}
