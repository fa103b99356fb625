//! Execution of independent per-client work.

use alloc::vec::Vec;

/// Maps a pure function over `0..n`, returning results in index order.
///
/// Implementations may run the calls concurrently; callers never depend on
/// the order in which calls happen, only on the order of the results.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}
