//! Order-preserving fan-out over independent work items.
//!
//! With the `parallel` feature, [`Execution::Parallel`] runs items on a
//! rayon pool; without it every execution is sequential. Results always come
//! back in input order, so reductions over them do not depend on scheduling.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `workers == 0` uses the global pool's default thread count.
    Parallel { workers: usize },
}

impl Execution {
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { workers }
        }
    }

    /// Applies `f` to every item and returns the results in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => Ok(items.iter().enumerate().map(|(i, x)| f(i, x)).collect()),
            Execution::Parallel { workers } => par_map(*workers, items, f),
        }
    }
}

impl Default for Execution {
    fn default() -> Self {
        Execution::Parallel { workers: 0 }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use crate::error::Error;
    use rayon::prelude::*;
    let run = || items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
    if workers == 0 {
        return Ok(run());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot build a pool of {workers} workers: {e}")))?;
    Ok(pool.install(run))
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(_workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    Ok(items.iter().enumerate().map(|(i, x)| f(i, x)).collect())
}
