//! Execution strategy for data-parallel loops.
//!
//! Every batch-shaped loop in the crate goes through [`ExecMode::map`], so the same code
//! path runs sequentially or on the rayon pool. Results are always returned in input
//! order, which keeps reductions (and therefore training) bitwise reproducible across
//! modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Falls back to sequential execution when the `parallel` feature is off.
    #[default]
    Parallel,
}

impl ExecMode {
    /// The mode actually used after accounting for compiled features.
    pub fn effective(self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }

    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &T) -> U + Sync + Send,
    {
        match self.effective() {
            ExecMode::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            #[cfg(feature = "parallel")]
            ExecMode::Parallel => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            #[cfg(not(feature = "parallel"))]
            ExecMode::Parallel => unreachable!(),
        }
    }
}
