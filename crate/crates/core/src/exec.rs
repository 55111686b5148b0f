//! Execution strategy for the data-parallel kernels.
//!
//! Every kernel produces the same bits under either strategy: work is split
//! by independent output rows and any reduction runs afterwards in index
//! order on a single thread.

/// How row-parallel kernels are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// behaves exactly like [`Exec::Sequential`].
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Evaluates `f` for every index in `0..n` and collects the results in
    /// index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fills `out` in chunks of `row_len`, calling `f(row, chunk)` for each row.
    pub fn fill_rows<T, F>(self, out: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                out.par_chunks_mut(row_len)
                    .enumerate()
                    .for_each(|(i, row)| f(i, row));
            }
            _ => out
                .chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
        }
    }
}

/// Caps the global rayon pool. Returns false when the pool was already
/// initialised or parallelism is compiled out.
pub fn limit_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}
