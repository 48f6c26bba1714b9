//! Execution strategy for the data-parallel loops (trajectory ensembles,
//! generator sweeps).
//!
//! Every parallel loop maps an index range to an ordered `Vec`, so the
//! parallel and sequential strategies produce identical output; any
//! floating-point reduction happens afterwards, sequentially, in index
//! order. Without the `parallel` feature both variants run sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
    /// Evaluates `f(0), …, f(n-1)` and returns the results in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Folds `f(i)` into per-worker accumulators and merges them.
    ///
    /// `merge` must be associative and commutative *exactly* (integer
    /// counters, maps of counts) for the result to be independent of the
    /// strategy.
    pub fn fold_range<A, F, M, I>(self, n: usize, init: I, f: F, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(A, usize) -> A + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().fold(&init, &f).reduce(&init, &merge)
            }
            _ => {
                let _ = &merge;
                (0..n).fold(init(), f)
            }
        }
    }
}
