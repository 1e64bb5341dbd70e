//! Execution policy for the data-parallel kernels.
//!
//! Every kernel that can run in parallel produces bit-identical output in both
//! modes: work is split into independent items (rows, cells, vertices) whose
//! results are gathered in index order, and reductions use a fixed chunking.

/// Chunk length used by reductions; fixed so sums do not depend on the thread pool.
pub const REDUCE_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Whether the parallel path is actually taken.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..n` and collects the results in index order.
    pub fn map_collect<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fills `out` in chunks of `chunk` entries; `f(start, slice)` writes one chunk.
    pub fn fill_chunks<F>(self, out: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(k, s)| f(k * chunk, s));
            return;
        }
        for (k, s) in out.chunks_mut(chunk).enumerate() {
            f(k * chunk, s);
        }
    }

    /// Dot product with a fixed chunked summation order.
    pub fn dot(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let partial = |k: usize| {
            let lo = k * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(a.len());
            a[lo..hi]
                .iter()
                .zip(&b[lo..hi])
                .fold(0.0, |acc, (x, y)| acc + x * y)
        };
        let chunks = a.len().div_ceil(REDUCE_CHUNK);
        self.map_collect(chunks, partial).into_iter().sum()
    }

    pub fn norm(self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}
