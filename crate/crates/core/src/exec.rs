//! Fan-out of independent jobs (per-chunk forward/backward, per-window
//! evaluation). Results always come back in job order, so reductions over
//! them are deterministic regardless of the executor.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map<R: Send>(&self, n_jobs: usize, job: &(dyn Fn(usize) -> R + Sync)) -> Vec<R>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<R: Send>(&self, n_jobs: usize, job: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        (0..n_jobs).map(job).collect()
    }
}
