//! Wall-clock comparison of model inference against the label pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use cellfree_core::pipeline::{solve_scenario, PipelineOptions};
use cellfree_core::rng;
use cellfree_core::scenario::{sample_scenario, NetworkConfig};
use cellfree_nn::model::predict;
use cellfree_nn::TransformerWeights;

use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub k: usize,
    pub l: usize,
    pub n_mc: usize,
    pub inference_ms: Vec<f64>,
    pub solver_ms: Vec<f64>,
    pub median_inference_ms: f64,
    pub median_solver_ms: f64,
    pub speedup: f64,
}

/// Times `reps` scenarios; the pipeline covers coefficients plus both solvers.
pub fn bench_runtime(
    weights: &TransformerWeights,
    k: usize,
    l: usize,
    cfg: &NetworkConfig,
    opts: &PipelineOptions,
    reps: usize,
    seed: u64,
) -> anyhow::Result<BenchReport> {
    anyhow::ensure!(reps >= 3, "reps must be at least 3");
    let mut inference_ms = Vec::with_capacity(reps);
    let mut solver_ms = Vec::with_capacity(reps);
    for r in 0..reps {
        let sc = sample_scenario(cfg, k, l, rng::derive_seed(seed, &[r as u64]))?;
        let t = Instant::now();
        let p = predict(weights, &sc, cfg)?;
        inference_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(p);
        let t = Instant::now();
        let s = solve_scenario(cfg, &sc, opts)?;
        solver_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(s);
    }
    let (mi, ms) = (stats::median(&inference_ms), stats::median(&solver_ms));
    Ok(BenchReport {
        k,
        l,
        n_mc: opts.n_mc,
        inference_ms,
        solver_ms,
        median_inference_ms: mi,
        median_solver_ms: ms,
        speedup: ms / mi,
    })
}
