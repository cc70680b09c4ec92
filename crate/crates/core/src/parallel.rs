//! Data-parallel map helpers.
//!
//! With the `parallel` feature, [`Execution::Parallel`] fans work out over the
//! rayon global pool; without it every call runs sequentially. Results are
//! always returned in input order and callers reduce them sequentially, so
//! both modes produce bitwise-identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether `Parallel` actually runs on a thread pool in this build.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// `f(0), f(1), ..., f(n - 1)` in order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// `f` applied to every item, in order.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_range(Execution::Sequential, 10_000, f);
        let b = map_range(Execution::Parallel, 10_000, f);
        assert_eq!(a, b);
        let xs: Vec<f64> = (0..500).map(|i| i as f64 * 0.1).collect();
        assert_eq!(
            map_slice(Execution::Sequential, &xs, |x| x.exp()),
            map_slice(Execution::Parallel, &xs, |x| x.exp())
        );
    }
}
