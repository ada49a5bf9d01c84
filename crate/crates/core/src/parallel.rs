//! Worker pool with deterministic agent sharding.

use rayon::prelude::*;

/// Runs per-agent work either inline or on a dedicated pool. Agent `i`
/// belongs to learner shard `i mod learners`; results always come back in
/// agent order, so output never depends on the worker count.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
    learners: usize,
}

impl Executor {
    pub fn new(workers: usize, learners: usize) -> Self {
        let pool = if workers > 1 {
            rayon::ThreadPoolBuilder::new().num_threads(workers).build().ok()
        } else {
            None
        };
        Executor {
            pool,
            learners: learners.max(1),
        }
    }

    pub fn serial() -> Self {
        Executor::new(1, 1)
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn learners(&self) -> usize {
        self.learners
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => {
                let learners = self.learners.min(n.max(1));
                let shards: Vec<Vec<(usize, T)>> = pool.install(|| {
                    (0..learners)
                        .into_par_iter()
                        .map(|l| (l..n).step_by(learners).map(|i| (i, f(i))).collect())
                        .collect()
                });
                let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
                for (i, v) in shards.into_iter().flatten() {
                    slots[i] = Some(v);
                }
                slots.into_iter().map(|v| v.expect("every agent mapped")).collect()
            }
        }
    }

    pub fn try_map<T, E, F>(&self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync,
    {
        self.map(n, f).into_iter().collect()
    }
}
