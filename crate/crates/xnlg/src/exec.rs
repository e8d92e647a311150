//! Scoped-thread executor.

use std::num::NonZeroUsize;
use std::thread;

use xnlg_core::exec::Executor;

/// Splits each job list into contiguous chunks, one per worker thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threads {
    workers: usize,
}

impl Threads {
    pub fn new(workers: usize) -> Self {
        Threads { workers: workers.max(1) }
    }

    /// One worker per available core.
    pub fn available() -> Self {
        Threads::new(thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Default for Threads {
    fn default() -> Self {
        Threads::available()
    }
}

impl Executor for Threads {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        if self.workers == 1 || items.len() <= 1 {
            return items.iter().map(f).collect();
        }
        let chunk = items.len().div_ceil(self.workers);
        let f = &f;
        thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker thread panicked"))
                .collect()
        })
    }
}
