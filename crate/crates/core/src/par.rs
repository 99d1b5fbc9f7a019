//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`ExecutionMode::Parallel`]
//! maps over rayon's global pool; without it every mode runs sequentially.
//! Results are always returned in input order, so outputs do not depend on
//! the mode or the thread count.

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecutionMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecutionMode {
    /// Whether this mode will actually fan out in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecutionMode::Parallel
    }
}

pub fn map_range<R, F>(mode: ExecutionMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

pub fn map<T, R, F>(mode: ExecutionMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(mode, items.len(), |i| f(&items[i]))
}

/// Like [`map_range`] but stops at the first error (in index order).
pub fn try_map_range<R, F>(mode: ExecutionMode, n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    map_range(mode, n, f).into_iter().collect()
}

/// Caps the global worker pool. Only the first call in a process has effect.
#[cfg(feature = "parallel")]
pub fn init_thread_pool(threads: usize) -> bool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .is_ok()
}

#[cfg(not(feature = "parallel"))]
pub fn init_thread_pool(_threads: usize) -> bool {
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map(ExecutionMode::Sequential, &items, |x| x * x);
        let par = map(ExecutionMode::Parallel, &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 999 * 999);
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>> = try_map_range(ExecutionMode::Parallel, 10, |i| {
            if i >= 3 {
                Err(crate::error::ModensError::Domain(format!("bad {i}")))
            } else {
                Ok(i)
            }
        });
        assert_eq!(r.unwrap_err().to_string(), "domain error: bad 3");
    }
}
