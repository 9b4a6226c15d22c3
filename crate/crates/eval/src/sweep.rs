//! Mean per-UE SE as K or L varies, with paired scenarios across points.
//!
//! Sample `s` of every point uses the same scenario seed. Positions are
//! drawn sequentially, so the scenario at a smaller K or L is a prefix of
//! the one at a larger value.

use serde::{Deserialize, Serialize};

use cellfree_core::pipeline::PipelineOptions;
use cellfree_core::rng;
use cellfree_core::scenario::{sample_scenario, NetworkConfig};
use cellfree_nn::TransformerWeights;

use crate::evaluate::{solve_and_evaluate, EvalRecord};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub l: usize,
    pub se_opt_ul: f64,
    pub se_pred_ul: f64,
    pub ratio_ul: f64,
    pub se_opt_dl: f64,
    pub se_pred_dl: f64,
    pub ratio_dl: f64,
    /// Mean optimal per-UE SE of each sample, in sample order.
    pub per_sample_opt_ul: Vec<f64>,
    pub per_sample_opt_dl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// "k" or "l".
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Increasing,
    Decreasing,
}

impl SweepTable {
    /// Mean optimal SE per row, in row order.
    pub fn optimal_curve(&self, ul: bool) -> Vec<f64> {
        self.rows.iter().map(|r| if ul { r.se_opt_ul } else { r.se_opt_dl }).collect()
    }
}

/// Fraction of adjacent-row comparisons of the optimal curves, pooled over
/// `tables`, that follow `trend`.
pub fn trend_agreement(tables: &[SweepTable], ul: bool, trend: Trend) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for t in tables {
        for w in t.optimal_curve(ul).windows(2) {
            total += 1;
            agree += usize::from(match trend {
                Trend::Increasing => w[1] > w[0],
                Trend::Decreasing => w[1] < w[0],
            });
        }
    }
    agree as f64 / total.max(1) as f64
}

fn row(records: &[EvalRecord]) -> SweepRow {
    let col = |f: &dyn Fn(&EvalRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let opt_ul = col(&|r| r.ul.mean_se().optimal);
    let opt_dl = col(&|r| r.dl.mean_se().optimal);
    SweepRow {
        k: records[0].k,
        l: records[0].l,
        se_opt_ul: stats::mean(&opt_ul),
        se_pred_ul: stats::mean(&col(&|r| r.ul.mean_se().predicted)),
        ratio_ul: stats::mean(&col(&|r| r.ul.ratio)),
        se_opt_dl: stats::mean(&opt_dl),
        se_pred_dl: stats::mean(&col(&|r| r.dl.mean_se().predicted)),
        ratio_dl: stats::mean(&col(&|r| r.dl.ratio)),
        per_sample_opt_ul: opt_ul,
        per_sample_opt_dl: opt_dl,
    }
}

fn sweep(
    axis: &str,
    weights: Option<&TransformerWeights>,
    points: &[(usize, usize)],
    samples: usize,
    cfg: &NetworkConfig,
    opts: &PipelineOptions,
    seed: u64,
) -> anyhow::Result<SweepTable> {
    anyhow::ensure!(samples >= 1, "need at least one sample per point");
    let mut rows = Vec::with_capacity(points.len());
    for &(k, l) in points {
        let records = (0..samples)
            .map(|s| {
                let sc = sample_scenario(cfg, k, l, rng::derive_seed(seed, &[s as u64]))?;
                solve_and_evaluate(weights, &sc, cfg, opts, crate::evaluate::FPA_NU)
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        rows.push(row(&records));
    }
    Ok(SweepTable { axis: axis.into(), rows })
}

pub fn sweep_k(
    weights: Option<&TransformerWeights>,
    l: usize,
    k_list: &[usize],
    samples_per_k: usize,
    cfg: &NetworkConfig,
    opts: &PipelineOptions,
    seed: u64,
) -> anyhow::Result<SweepTable> {
    let points: Vec<_> = k_list.iter().map(|&k| (k, l)).collect();
    sweep("k", weights, &points, samples_per_k, cfg, opts, seed)
}

pub fn sweep_l(
    weights: Option<&TransformerWeights>,
    k: usize,
    l_list: &[usize],
    samples_per_l: usize,
    cfg: &NetworkConfig,
    opts: &PipelineOptions,
    seed: u64,
) -> anyhow::Result<SweepTable> {
    let points: Vec<_> = l_list.iter().map(|&l| (k, l)).collect();
    sweep("l", weights, &points, samples_per_l, cfg, opts, seed)
}
