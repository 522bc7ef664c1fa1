//! Runs independent simulations on worker threads or sequentially. Results
//! keep input order, so every reduction over them is deterministic.

/// Worker-count override read by the CLI and the sweep driver.
pub const WORKERS_ENV: &str = "PIMSIM_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// `None` uses the global pool; `Some(n)` a dedicated pool of `n`.
    Parallel(Option<usize>),
}

impl Default for Exec {
    fn default() -> Self {
        Exec::from_env()
    }
}

impl Exec {
    /// Parallel unless `PIMSIM_WORKERS` is 1; a larger value sets the pool size.
    pub fn from_env() -> Self {
        match std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            Some(0 | 1) => Exec::Sequential,
            Some(n) => Exec::Parallel(Some(n)),
            None => Exec::Parallel(None),
        }
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            Exec::Parallel(workers) => par_map(items, f, workers),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F, workers: Option<usize>) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match workers {
        None => items.par_iter().map(f).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool")
            .install(|| items.par_iter().map(f).collect()),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F, _workers: Option<usize>) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 7;
        assert_eq!(Exec::Sequential.map(&xs, f), Exec::Parallel(None).map(&xs, f));
        assert_eq!(Exec::Sequential.map(&xs, f), Exec::Parallel(Some(3)).map(&xs, f));
    }
}
