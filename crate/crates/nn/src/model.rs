//! Transformer power predictor.
//!
//! Tokens are UEs. Each token embeds its own coordinates plus the mean of
//! the AP coordinate embeddings, so one parameter set serves every (K, L).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use cellfree_core::dataset::build_features;
use cellfree_core::rng;
use cellfree_core::scenario::{NetworkConfig, Scenario};

use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;
/// Raw DL head sums below this fall back to an equal split.
pub const DL_FALLBACK_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 32, layers: 2, heads: 4, d_ffn: 128, dropout: 0.1, ln_eps: 1e-5 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_ffn == 0 {
            return Err(NnError::Config("dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(NnError::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.ln_eps >= 0.0) {
            return Err(NnError::Config("dropout must lie in [0, 1) and ln_eps be nonnegative".into()));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: T,
    pub b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
}

/// Every trainable array of the model, generic over storage so the same
/// layout holds tensors, graph nodes or optimizer flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub ue_embed: Linear<T>,
    pub ap_embed: Linear<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub head_ul: Linear<T>,
    pub head_dl: Linear<T>,
}

impl<T> Params<T> {
    /// Applies `f` to every array in a fixed order, passing its name.
    pub fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> Params<U> {
        fn lin<T, U>(f: &mut impl FnMut(&str, &T) -> U, name: &str, l: &Linear<T>) -> Linear<U> {
            Linear { w: f(&format!("{name}.w"), &l.w), b: f(&format!("{name}.b"), &l.b) }
        }
        let ue_embed = lin(f, "ue_embed", &self.ue_embed);
        let ap_embed = lin(f, "ap_embed", &self.ap_embed);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            layers.push(EncoderLayer {
                q: lin(f, &format!("{p}.q"), &layer.q),
                k: lin(f, &format!("{p}.k"), &layer.k),
                v: lin(f, &format!("{p}.v"), &layer.v),
                o: lin(f, &format!("{p}.o"), &layer.o),
                ff1: lin(f, &format!("{p}.ff1"), &layer.ff1),
                ff2: lin(f, &format!("{p}.ff2"), &layer.ff2),
                ln1_gamma: f(&format!("{p}.ln1.gamma"), &layer.ln1_gamma),
                ln1_beta: f(&format!("{p}.ln1.beta"), &layer.ln1_beta),
                ln2_gamma: f(&format!("{p}.ln2.gamma"), &layer.ln2_gamma),
                ln2_beta: f(&format!("{p}.ln2.beta"), &layer.ln2_beta),
            });
        }
        let head_ul = lin(f, "head_ul", &self.head_ul);
        let head_dl = lin(f, "head_dl", &self.head_dl);
        Params { ue_embed, ap_embed, layers, head_ul, head_dl }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(&mut |n, _| out.push(n.to_string()));
        out
    }

    pub fn refs(&self) -> Vec<&T> {
        let mut out = Vec::new();
        fn push<'a, T>(out: &mut Vec<&'a T>, l: &'a Linear<T>) {
            out.push(&l.w);
            out.push(&l.b);
        }
        push(&mut out, &self.ue_embed);
        push(&mut out, &self.ap_embed);
        for layer in &self.layers {
            for l in [&layer.q, &layer.k, &layer.v, &layer.o, &layer.ff1, &layer.ff2] {
                push(&mut out, l);
            }
            out.extend([&layer.ln1_gamma, &layer.ln1_beta, &layer.ln2_gamma, &layer.ln2_beta]);
        }
        push(&mut out, &self.head_ul);
        push(&mut out, &self.head_dl);
        out
    }

    pub fn refs_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        fn push<'a, T>(out: &mut Vec<&'a mut T>, l: &'a mut Linear<T>) {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        push(&mut out, &mut self.ue_embed);
        push(&mut out, &mut self.ap_embed);
        for layer in &mut self.layers {
            for l in [&mut layer.q, &mut layer.k, &mut layer.v, &mut layer.o, &mut layer.ff1, &mut layer.ff2] {
                push(&mut out, l);
            }
            out.extend([&mut layer.ln1_gamma, &mut layer.ln1_beta, &mut layer.ln2_gamma, &mut layer.ln2_beta]);
        }
        push(&mut out, &mut self.head_ul);
        push(&mut out, &mut self.head_dl);
        out
    }
}

/// Shapes of every array for a config, as a `Params<[rows, cols]>`.
fn shapes(cfg: &ModelConfig) -> Params<[usize; 2]> {
    let d = cfg.d_model;
    let lin = |i: usize, o: usize| Linear { w: [i, o], b: [1, o] };
    Params {
        ue_embed: lin(2, d),
        ap_embed: lin(2, d),
        layers: (0..cfg.layers)
            .map(|_| EncoderLayer {
                q: lin(d, d),
                k: lin(d, d),
                v: lin(d, d),
                o: lin(d, d),
                ff1: lin(d, cfg.d_ffn),
                ff2: lin(cfg.d_ffn, d),
                ln1_gamma: [1, d],
                ln1_beta: [1, d],
                ln2_gamma: [1, d],
                ln2_beta: [1, d],
            })
            .collect(),
        head_ul: lin(d, 1),
        head_dl: lin(d, 1),
    }
}

/// Layer-norm parameters and biases are exempt from weight decay.
pub fn decays(name: &str) -> bool {
    name.ends_with(".w")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights {
    pub config: ModelConfig,
    pub params: Params<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format_version: u32,
    config: ModelConfig,
    arrays: BTreeMap<String, Tensor>,
}

impl TransformerWeights {
    /// Xavier-uniform matrices, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng_from(seed);
        let params = shapes(cfg).map(&mut |name, &[rows, cols]| {
            if name.ends_with(".w") {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-a..a)).collect()).expect("shape")
            } else if name.ends_with(".gamma") {
                Tensor::full(rows, cols, 1.0)
            } else {
                Tensor::zeros(rows, cols)
            }
        });
        Ok(Self { config: cfg.clone(), params })
    }

    pub fn n_params(&self) -> usize {
        self.params.refs().iter().map(|t| t.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let names = self.params.names();
        let arrays = names.into_iter().zip(self.params.refs().into_iter().cloned()).collect();
        let file = WeightFile { format_version: WEIGHTS_FORMAT_VERSION, config: self.config.clone(), arrays };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: serde_json::Value = serde_json::from_str(text)?;
        match header.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == WEIGHTS_FORMAT_VERSION as u64 => {}
            other => return Err(NnError::Format(format!("unsupported format_version {other:?}"))),
        }
        let mut file: WeightFile = serde_json::from_value(header)?;
        file.config.validate()?;
        let template = shapes(&file.config);
        let mut missing = Vec::new();
        let mut wrong = Vec::new();
        let params = template.map(&mut |name, &shape| match file.arrays.remove(name) {
            Some(t) if t.shape() == shape => t,
            Some(_) => {
                wrong.push(name.to_string());
                Tensor::zeros(shape[0], shape[1])
            }
            None => {
                missing.push(name.to_string());
                Tensor::zeros(shape[0], shape[1])
            }
        });
        if !missing.is_empty() || !wrong.is_empty() || !file.arrays.is_empty() {
            let extra: Vec<_> = file.arrays.keys().collect();
            return Err(NnError::Format(format!("missing {missing:?}, wrong shape {wrong:?}, unexpected {extra:?}")));
        }
        Ok(Self { config: file.config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Inserts every array into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Params<NodeId> {
        self.params.map(&mut |_, t| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
    }
}

/// Splits a feature matrix into UE (K×2) and AP (L×2) coordinate tensors.
pub fn inputs_from_features(z: &[Vec<f64>]) -> Result<(Tensor, Tensor)> {
    let first = z.first().ok_or_else(|| NnError::Shape("no UE rows".into()))?;
    if first.len() < 4 || first.len() % 2 != 0 || z.iter().any(|r| r.len() != first.len()) {
        return Err(NnError::Shape("feature rows must have 2L+2 entries, L >= 1".into()));
    }
    let ue = Tensor::new(z.len(), 2, z.iter().flat_map(|r| [r[0], r[1]]).collect())?;
    let ap = Tensor::new((first.len() - 2) / 2, 2, first[2..].to_vec())?;
    Ok((ue, ap))
}

fn linear(g: &mut Graph, x: NodeId, l: &Linear<NodeId>) -> Result<NodeId> {
    let y = g.matmul(x, l.w)?;
    g.add(y, l.b)
}

/// H = ReLU(ue_embed(UE) + mean over APs of ap_embed(AP)).
pub fn embed_tokens(g: &mut Graph, p: &Params<NodeId>, ue: NodeId, ap: NodeId) -> Result<NodeId> {
    let u = linear(g, ue, &p.ue_embed)?;
    let a = linear(g, ap, &p.ap_embed)?;
    let pooled = g.mean_rows(a)?;
    let s = g.add(u, pooled)?;
    Ok(g.relu(s))
}

/// Softmax(Q·Kᵀ/√d_head)·V.
pub fn attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, d_head: usize) -> Result<NodeId> {
    let kt = g.transpose(k);
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (d_head as f64).sqrt());
    let a = g.softmax_rows(s)?;
    g.matmul(a, v)
}

pub fn mha(g: &mut Graph, layer: &EncoderLayer<NodeId>, h: NodeId, cfg: &ModelConfig) -> Result<NodeId> {
    let q = linear(g, h, &layer.q)?;
    let k = linear(g, h, &layer.k)?;
    let v = linear(g, h, &layer.v)?;
    let dh = cfg.d_head();
    let mut heads = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let (s, e) = (i * dh, (i + 1) * dh);
        let qi = g.slice_cols(q, s, e)?;
        let ki = g.slice_cols(k, s, e)?;
        let vi = g.slice_cols(v, s, e)?;
        heads.push(attention(g, qi, ki, vi, dh)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    linear(g, cat, &layer.o)
}

/// ReLU(H·W1 + b1)·W2 + b2.
pub fn ffn(g: &mut Graph, layer: &EncoderLayer<NodeId>, h: NodeId) -> Result<NodeId> {
    let x = linear(g, h, &layer.ff1)?;
    let x = g.relu(x);
    linear(g, x, &layer.ff2)
}

fn add_norm(g: &mut Graph, h: NodeId, sub: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
    let s = g.add(h, sub)?;
    let n = g.layer_norm_rows(s, eps)?;
    let n = g.mul(n, gamma)?;
    g.add(n, beta)
}

/// Post-norm encoder stack; dropout only when `train`.
pub fn encoder_forward(
    g: &mut Graph,
    p: &Params<NodeId>,
    mut h: NodeId,
    cfg: &ModelConfig,
    train: bool,
    seed: u64,
) -> Result<NodeId> {
    for (i, layer) in p.layers.iter().enumerate() {
        let a = mha(g, layer, h, cfg)?;
        let a = g.dropout(a, cfg.dropout, train, rng::derive_seed(seed, &[i as u64, 0]))?;
        h = add_norm(g, h, a, layer.ln1_gamma, layer.ln1_beta, cfg.ln_eps)?;
        let f = ffn(g, layer, h)?;
        let f = g.dropout(f, cfg.dropout, train, rng::derive_seed(seed, &[i as u64, 1]))?;
        h = add_norm(g, h, f, layer.ln2_gamma, layer.ln2_beta, cfg.ln_eps)?;
    }
    Ok(h)
}

/// Normalized head outputs, both K×1: UL in [0, 1], DL shares summing to 1.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub ul: NodeId,
    pub dl: NodeId,
}

pub fn heads(g: &mut Graph, p: &Params<NodeId>, h: NodeId) -> Result<HeadOutput> {
    let ul = linear(g, h, &p.head_ul)?;
    let ul = g.sigmoid(ul);
    let raw = linear(g, h, &p.head_dl)?;
    let raw = g.relu(raw);
    let sum = g.sum_all(raw);
    let dl = if g.value(sum).get(0, 0) < DL_FALLBACK_EPS {
        let k = g.value(raw).rows();
        g.input(Tensor::full(k, 1, 1.0 / k as f64))
    } else {
        g.div(raw, sum)?
    };
    Ok(HeadOutput { ul, dl })
}

/// Full forward pass on coordinate tensors normalized to [0, 1].
pub fn forward_graph(
    g: &mut Graph,
    p: &Params<NodeId>,
    cfg: &ModelConfig,
    ue: &Tensor,
    ap: &Tensor,
    train: bool,
    seed: u64,
) -> Result<HeadOutput> {
    if ue.cols() != 2 || ap.cols() != 2 || ue.rows() == 0 || ap.rows() == 0 {
        return Err(NnError::Shape("need K×2 UE and L×2 AP coordinates with K, L >= 1".into()));
    }
    let ue = g.input(ue.clone());
    let ap = g.input(ap.clone());
    let h = embed_tokens(g, p, ue, ap)?;
    let h = encoder_forward(g, p, h, cfg, train, seed)?;
    heads(g, p, h)
}

/// Sum of squared errors per sample, averaged over samples.
pub fn mse_loss(g: &mut Graph, pairs: &[(NodeId, NodeId)]) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(NnError::Shape("loss over an empty batch".into()));
    }
    let mut total: Option<NodeId> = None;
    for &(pred, target) in pairs {
        let d = g.sub(pred, target)?;
        let sq = g.mul(d, d)?;
        let s = g.sum_all(sq);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    Ok(g.scale(total.expect("nonempty"), 1.0 / pairs.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_ul: Vec<f64>,
    pub p_dl: Vec<f64>,
}

impl Prediction {
    /// K rows of `[p_ul, p_dl]` in mW.
    pub fn matrix(&self) -> Vec<[f64; 2]> {
        self.p_ul.iter().zip(&self.p_dl).map(|(&u, &d)| [u, d]).collect()
    }
}

/// Eval-mode prediction in mW from normalized features.
pub fn predict_features(w: &TransformerWeights, z: &[Vec<f64>], p_ul_max: f64, dl_budget: f64) -> Result<Prediction> {
    let (ue, ap) = inputs_from_features(z)?;
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let out = forward_graph(&mut g, &p, &w.config, &ue, &ap, false, 0)?;
    Ok(Prediction {
        p_ul: g.value(out.ul).data().iter().map(|x| x * p_ul_max).collect(),
        p_dl: g.value(out.dl).data().iter().map(|x| x * dl_budget).collect(),
    })
}

pub fn predict(w: &TransformerWeights, scenario: &Scenario, cfg: &NetworkConfig) -> Result<Prediction> {
    predict_features(w, &build_features(scenario, cfg.area_side), cfg.p_ul_max, cfg.dl_budget(scenario.l))
}
