use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use tfhts_core::exec::Executor;

use crate::error::{Error, Result};

/// Worker-count cap read by [`Rayon::from_env`].
pub const THREADS_VAR: &str = "TFH_THREADS";

/// Thread-pool executor. Results come back in job order, so reductions over
/// them do not depend on the worker count.
pub struct Rayon {
    pool: ThreadPool,
}

impl Rayon {
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let mut b = ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        let pool = b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Rayon { pool })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(threads_from(std::env::var(THREADS_VAR).ok().as_deref())?)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

fn threads_from(value: Option<&str>) -> Result<Option<usize>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_VAR}: expected a positive integer, got `{s}`"))),
        },
    }
}

impl Executor for Rayon {
    fn map<R: Send>(&self, n_jobs: usize, job: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        self.pool.install(|| (0..n_jobs).into_par_iter().map(job).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_results() {
        let ex = Rayon::new(Some(3)).unwrap();
        assert_eq!(ex.threads(), 3);
        assert_eq!(ex.map(10, &|i| i * i), (0..10).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn thread_variable_parsing() {
        assert_eq!(threads_from(None).unwrap(), None);
        assert_eq!(threads_from(Some("4")).unwrap(), Some(4));
        assert!(threads_from(Some("0")).is_err());
        assert!(threads_from(Some("many")).is_err());
    }
}
