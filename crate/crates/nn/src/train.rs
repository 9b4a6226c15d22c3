//! Supervised training on labeled samples, one (K, L) configuration at a time.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use cellfree_core::dataset::Sample;
use cellfree_core::rng;
use cellfree_core::scenario::NetworkConfig;

use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{self, forward_graph, inputs_from_features, mse_loss, ModelConfig, TransformerWeights};
use crate::optim::{AdamWConfig, AdamWState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_per_config: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Empty means every (K, L) present in the data, in sorted order.
    pub config_order: Vec<(usize, usize)>,
    /// One extra epoch over all configurations with batches in shuffled order.
    pub interleaved_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_config: 10,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            dropout: 0.1,
            seed: 0,
            config_order: Vec::new(),
            interleaved_epoch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigLosses {
    pub k: usize,
    pub l: usize,
    pub samples: usize,
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub configs: Vec<ConfigLosses>,
    pub interleaved_loss: Option<f64>,
    pub n_params: usize,
    pub wall_time_s: f64,
    pub weights_file: Option<String>,
}

/// Normalized targets as a K×2 tensor: UL over the per-UE cap, DL over the budget.
pub fn targets(s: &Sample, cfg: &NetworkConfig) -> Result<Tensor> {
    let budget = cfg.dl_budget(s.l);
    let data = s.p_star_ul.iter().zip(&s.p_star_dl).flat_map(|(&u, &d)| [u / cfg.p_ul_max, d / budget]).collect();
    Tensor::new(s.k, 2, data)
}

/// Optimizer and weights for one run.
pub struct Trainer {
    pub weights: TransformerWeights,
    pub opt: AdamWState,
    pub net: NetworkConfig,
}

impl Trainer {
    pub fn new(weights: TransformerWeights, net: NetworkConfig, adam: AdamWConfig) -> Self {
        let names = weights.params.names();
        let opt = AdamWState::new(adam, &weights.params.refs(), names.iter().map(|n| model::decays(n)).collect());
        Self { weights, opt, net }
    }

    /// Batch loss before the update, in normalized units.
    pub fn step(&mut self, batch: &[&Sample], seed: u64) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.weights.bind(&mut g, true);
        let mut pairs = Vec::with_capacity(batch.len());
        for (j, s) in batch.iter().enumerate() {
            let (ue, ap) = inputs_from_features(&s.z)?;
            let out = forward_graph(&mut g, &p, &self.weights.config, &ue, &ap, true, rng::derive_seed(seed, &[j as u64]))?;
            let pred = g.concat_cols(&[out.ul, out.dl])?;
            let target = g.input(targets(s, &self.net)?);
            pairs.push((pred, target));
        }
        let loss = mse_loss(&mut g, &pairs)?;
        let value = g.value(loss).get(0, 0);
        if !value.is_finite() {
            return Ok(value);
        }
        g.backward(loss)?;
        let ids: Vec<NodeId> = p.refs().into_iter().copied().collect();
        let grads: Vec<Tensor> = ids
            .iter()
            .map(|&id| {
                g.grad(id).cloned().unwrap_or_else(|| {
                    let v = g.value(id);
                    Tensor::zeros(v.rows(), v.cols())
                })
            })
            .collect();
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        self.opt.step(&mut self.weights.params.refs_mut(), &grad_refs)?;
        Ok(value)
    }
}

fn group(samples: &[Sample]) -> BTreeMap<(usize, usize), Vec<&Sample>> {
    let mut out: BTreeMap<(usize, usize), Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        out.entry((s.k, s.l)).or_default().push(s);
    }
    out
}

fn batches<'a>(items: &[&'a Sample], size: usize, seed: u64) -> Vec<Vec<&'a Sample>> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut rng::rng_from(seed));
    idx.chunks(size).map(|c| c.iter().map(|&i| items[i]).collect()).collect()
}

/// Trains from a fresh initialization. Deterministic for fixed inputs.
pub fn train(
    samples: &[Sample],
    net: &NetworkConfig,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(TransformerWeights, TrainReport)> {
    let start = Instant::now();
    if cfg.batch_size == 0 {
        return Err(NnError::Config("batch_size must be at least 1".into()));
    }
    let groups = group(samples);
    let order = if cfg.config_order.is_empty() { groups.keys().copied().collect() } else { cfg.config_order.clone() };
    if order.is_empty() {
        return Err(NnError::Data("no training samples".into()));
    }
    for kl in &order {
        if !groups.contains_key(kl) {
            return Err(NnError::Data(format!("no samples for K={} L={}", kl.0, kl.1)));
        }
    }
    let mcfg = ModelConfig { dropout: cfg.dropout, ..model_cfg.clone() };
    let weights = TransformerWeights::init(&mcfg, rng::derive_seed(cfg.seed, &[0]))?;
    let adam = AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
    let mut tr = Trainer::new(weights, net.clone(), adam);

    let mut report = TrainReport {
        configs: Vec::new(),
        interleaved_loss: None,
        n_params: tr.weights.n_params(),
        wall_time_s: 0.0,
        weights_file: None,
    };
    let run_batch = |tr: &mut Trainer, batch: &[&Sample], seed: u64, epoch: usize, b: usize| -> Result<f64> {
        let loss = tr.step(batch, seed)?;
        if !loss.is_finite() {
            return Err(NnError::NonFinite { k: batch[0].k, l: batch[0].l, epoch, batch: b });
        }
        Ok(loss * batch.len() as f64)
    };
    for &(k, l) in &order {
        let items = &groups[&(k, l)];
        let mut losses = Vec::with_capacity(cfg.epochs_per_config);
        for epoch in 0..cfg.epochs_per_config {
            let tag = [1, k as u64, l as u64, epoch as u64];
            let mut total = 0.0;
            for (b, batch) in batches(items, cfg.batch_size, rng::derive_seed(cfg.seed, &tag)).iter().enumerate() {
                let seed = rng::derive_seed(cfg.seed, &[2, k as u64, l as u64, epoch as u64, b as u64]);
                total += run_batch(&mut tr, batch, seed, epoch, b)?;
            }
            losses.push(total / items.len() as f64);
        }
        report.configs.push(ConfigLosses { k, l, samples: items.len(), epoch_losses: losses });
    }
    if cfg.interleaved_epoch {
        let mut all: Vec<Vec<&Sample>> = order
            .iter()
            .flat_map(|&(k, l)| batches(&groups[&(k, l)], cfg.batch_size, rng::derive_seed(cfg.seed, &[3, k as u64, l as u64])))
            .collect();
        all.shuffle(&mut rng::rng_from(rng::derive_seed(cfg.seed, &[4])));
        let n: usize = all.iter().map(Vec::len).sum();
        let mut total = 0.0;
        for (b, batch) in all.iter().enumerate() {
            total += run_batch(&mut tr, batch, rng::derive_seed(cfg.seed, &[5, b as u64]), cfg.epochs_per_config, b)?;
        }
        report.interleaved_loss = Some(total / n as f64);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((tr.weights, report))
}

pub fn save_weights(w: &TransformerWeights, path: &Path) -> Result<()> {
    w.save(path)
}

pub fn load_weights(path: &Path) -> Result<TransformerWeights> {
    TransformerWeights::load(path)
}
