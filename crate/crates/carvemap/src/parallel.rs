//! Scoped worker threads with deterministic result order.

use carvemap_core::refine::{PairExecutor, PairTerm};

/// Worker count for a `--threads` value; 0 means every available core.
pub fn worker_count(threads: usize) -> usize {
    if threads > 0 {
        threads
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

/// `(0..n).map(f)` spread over contiguous chunks; results keep index order.
pub fn parallel_map<T, F>(threads: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count(threads).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Runs refinement pair terms on scoped threads.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    pub threads: usize,
}

impl PairExecutor for Threaded {
    fn run(&self, jobs: usize, job: &(dyn Fn(usize) -> PairTerm + Sync)) -> Vec<PairTerm> {
        parallel_map(self.threads, jobs, job)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order_for_any_worker_count() {
        for threads in [1, 2, 3, 8, 64] {
            assert_eq!(parallel_map(threads, 10, |i| i * i), (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(parallel_map(4, 0, |i| i).is_empty());
    }
}
