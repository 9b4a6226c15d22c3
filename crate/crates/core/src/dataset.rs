//! Labeled samples (coordinates → optimal powers), their on-disk format and
//! the train/test split.
//!
//! A dataset directory holds one `manifest.json` plus one NDJSON shard per
//! (K, L) pair with one [`Sample`] object per line. Split manifests
//! (`train.json`, `test.json`) reference the same shards by line index.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::{self, PipelineOptions};
use crate::rng::{self, stream};
use crate::scenario::{self, NetworkConfig, Scenario};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.json";
pub const TEST_FILE: &str = "test.json";
const MAX_ATTEMPTS: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub k: usize,
    pub l: usize,
    pub ue_xy: Vec<[f64; 2]>,
    pub ap_xy: Vec<[f64; 2]>,
    /// K×(2L+2) normalized features.
    pub z: Vec<Vec<f64>>,
    pub p_star_ul: Vec<f64>,
    pub p_star_dl: Vec<f64>,
    pub min_se_ul: f64,
    pub min_se_dl: f64,
    pub seed: u64,
}

impl Sample {
    pub fn scenario(&self) -> Scenario {
        Scenario { k: self.k, l: self.l, ue_xy: self.ue_xy.clone(), ap_xy: self.ap_xy.clone(), seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub k: usize,
    pub l: usize,
    pub file: String,
    /// Lines in the shard file.
    pub count: usize,
    /// Selected line indices; `None` selects the whole shard.
    pub indices: Option<Vec<usize>>,
}

impl ShardEntry {
    pub fn selected(&self) -> Vec<usize> {
        self.indices.clone().unwrap_or_else(|| (0..self.count).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resample {
    pub k: usize,
    pub l: usize,
    pub index: usize,
    pub attempt: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub config: NetworkConfig,
    pub pipeline: PipelineOptions,
    pub seed: u64,
    pub k_values: Vec<usize>,
    pub l_values: Vec<usize>,
    pub samples_per_config: usize,
    pub split_ratio: Option<f64>,
    /// Coordinates are mapped from `[lower, upper]` meters to `[0, 1]`.
    pub normalization: [f64; 2],
    pub shards: Vec<ShardEntry>,
    pub resampled: Vec<Resample>,
}

impl DatasetManifest {
    pub fn total(&self) -> usize {
        self.shards.iter().map(|s| s.selected().len()).sum()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Dataset(format!("unsupported format_version {}", m.format_version)));
        }
        Ok(m)
    }
}

pub fn config_hash(cfg: &NetworkConfig) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Row k is `[x_k, y_k, x_1, y_1, …, x_L, y_L]` divided by the area side;
/// AP coordinates repeat identically on every row.
pub fn build_features(scenario: &Scenario, area_side: f64) -> Vec<Vec<f64>> {
    let ap: Vec<f64> = scenario.ap_xy.iter().flat_map(|p| [p[0] / area_side, p[1] / area_side]).collect();
    scenario
        .ue_xy
        .iter()
        .map(|u| {
            let mut row = Vec::with_capacity(2 * scenario.l + 2);
            row.push(u[0] / area_side);
            row.push(u[1] / area_side);
            row.extend_from_slice(&ap);
            row
        })
        .collect()
}

/// Maps normalized features back to meters.
pub fn denormalize(z: &[Vec<f64>], area_side: f64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let ue = z.iter().map(|r| [r[0] * area_side, r[1] * area_side]).collect();
    let ap = z
        .first()
        .map(|r| r[2..].chunks(2).map(|c| [c[0] * area_side, c[1] * area_side]).collect())
        .unwrap_or_default();
    (ue, ap)
}

/// Generates one labeled sample for the given seed.
pub fn label_sample(cfg: &NetworkConfig, k: usize, l: usize, seed: u64, opts: &PipelineOptions) -> Result<Sample> {
    let sc = scenario::sample_scenario(cfg, k, l, seed)?;
    let solved = pipeline::solve_scenario(cfg, &sc, opts)?;
    if !solved.ul.converged || !solved.dl.converged {
        return Err(Error::Solver("bisection did not converge".into()));
    }
    Ok(Sample {
        k,
        l,
        z: build_features(&sc, cfg.area_side),
        ue_xy: sc.ue_xy,
        ap_xy: sc.ap_xy,
        p_star_ul: solved.ul.p.p,
        p_star_dl: solved.dl.p.p,
        min_se_ul: solved.ul.min_se,
        min_se_dl: solved.dl.min_se,
        seed,
    })
}

pub fn sample_seed(root: u64, k: usize, l: usize, index: usize, attempt: u64) -> u64 {
    rng::derive_seed(root, &[stream::SAMPLE, k as u64, l as u64, index as u64, attempt])
}

fn shard_name(k: usize, l: usize) -> String {
    format!("shard_k{k}_l{l}.ndjson")
}

/// Generates `n_per_config` samples for every (K, L) pair and writes the
/// shards and `manifest.json` into `out_dir`.
pub fn generate_dataset(
    cfg: &NetworkConfig,
    k_values: &[usize],
    l_values: &[usize],
    n_per_config: usize,
    seed: u64,
    out_dir: &Path,
    opts: &PipelineOptions,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    opts.solver.validate()?;
    if n_per_config == 0 {
        return Err(Error::InvalidArgument("n_per_config must be at least 1".into()));
    }
    if k_values.is_empty() || l_values.is_empty() {
        return Err(Error::InvalidArgument("empty K or L list".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut shards = Vec::new();
    let mut resampled = Vec::new();
    for &k in k_values {
        for &l in l_values {
            let file = shard_name(k, l);
            let mut w = BufWriter::new(fs::File::create(out_dir.join(&file))?);
            for index in 0..n_per_config {
                let sample = (0..MAX_ATTEMPTS)
                    .find_map(|attempt| match label_sample(cfg, k, l, sample_seed(seed, k, l, index, attempt), opts) {
                        Ok(s) => Some(s),
                        Err(e) => {
                            eprintln!("resampling K={k} L={l} #{index} (attempt {attempt}): {e}");
                            resampled.push(Resample { k, l, index, attempt, reason: e.to_string() });
                            None
                        }
                    })
                    .ok_or_else(|| Error::Dataset(format!("K={k} L={l} sample {index}: all attempts failed")))?;
                serde_json::to_writer(&mut w, &sample)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            shards.push(ShardEntry { k, l, file, count: n_per_config, indices: None });
        }
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        config_hash: config_hash(cfg)?,
        config: cfg.clone(),
        pipeline: opts.clone(),
        seed,
        k_values: k_values.to_vec(),
        l_values: l_values.to_vec(),
        samples_per_config: n_per_config,
        split_ratio: None,
        normalization: [0.0, cfg.area_side],
        shards,
        resampled,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Stratified shuffle split: each (K, L) shard is split on its own.
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut train = manifest.clone();
    let mut test = manifest.clone();
    train.shards.clear();
    test.shards.clear();
    for shard in &manifest.shards {
        let mut idx = shard.selected();
        if idx.is_empty() {
            return Err(Error::Dataset(format!("empty stratum K={} L={}", shard.k, shard.l)));
        }
        let mut r = rng::rng_from(rng::derive_seed(seed, &[stream::SPLIT, shard.k as u64, shard.l as u64]));
        idx.shuffle(&mut r);
        let n_train = ((idx.len() as f64) * ratio).round() as usize;
        let (a, b) = idx.split_at(n_train.min(idx.len()));
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        train.shards.push(ShardEntry { indices: Some(a), ..shard.clone() });
        test.shards.push(ShardEntry { indices: Some(b), ..shard.clone() });
    }
    train.split_ratio = Some(ratio);
    test.split_ratio = Some(ratio);
    Ok((train, test))
}

/// Reads the shard lines selected by `manifest`, grouped by shard.
pub fn load_samples(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(manifest.total());
    for shard in &manifest.shards {
        let reader = BufReader::new(fs::File::open(dir.join(&shard.file))?);
        let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
        if lines.len() != shard.count {
            return Err(Error::Dataset(format!("{} has {} lines, manifest says {}", shard.file, lines.len(), shard.count)));
        }
        for i in shard.selected() {
            let line = lines
                .get(i)
                .ok_or_else(|| Error::Dataset(format!("index {i} out of range in {}", shard.file)))?;
            let s: Sample = serde_json::from_str(line)?;
            if s.k != shard.k || s.l != shard.l {
                return Err(Error::Dataset(format!("sample in {} has K={} L={}", shard.file, s.k, s.l)));
            }
            out.push(s);
        }
    }
    Ok(out)
}
