//! Pluggable execution of independent jobs.
//!
//! The core is single-threaded; the `xnlg` crate supplies a thread pool.
//! Every caller reduces results in input order, so outputs do not depend on
//! how jobs were scheduled.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// `items.iter().map(f)` with results in input order.
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        items.iter().map(f).collect()
    }
}
