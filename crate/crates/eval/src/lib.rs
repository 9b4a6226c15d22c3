//! Evaluation, sweeps, complexity counts, runtime benchmarks and plot export.

pub mod bench;
pub mod cli;
pub mod complexity;
pub mod evaluate;
pub mod plots;
pub mod stats;
pub mod sweep;

pub use evaluate::{evaluate, summarize, EvalRecord, EvalSummary};
