use fedsim_core::exec::Executor;
use rayon::prelude::*;

/// Runs `map` calls on the global rayon pool. Results keep index order, so
/// outputs match [`fedsim_core::exec::Serial`] exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        let f = &f;
        (0..n).into_par_iter().map(f).collect()
    }
}
