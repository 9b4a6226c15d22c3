//! Command-line interface of the `cellfree` binary.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cellfree_core::dataset::{self, DatasetManifest, MANIFEST_FILE, TEST_FILE, TRAIN_FILE};
use cellfree_core::pipeline::{solve_scenario, PipelineOptions};
use cellfree_core::scenario::{sample_scenario, NetworkConfig, Scenario};
use cellfree_nn::model::predict;
use cellfree_nn::train::{load_weights, save_weights};
use cellfree_nn::{ModelConfig, TrainConfig, TransformerWeights};

use crate::bench::bench_runtime;
use crate::complexity::{theoretical_complexity, Phase};
use crate::evaluate::{evaluate, summarize, EvalRecord, FPA_NU};
use crate::plots::{export_plots, export_sweep};
use crate::sweep::{sweep_k, sweep_l, SweepTable};

#[derive(Debug, Parser)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO power control: labels, training and evaluation")]
pub struct Cli {
    /// Network configuration JSON; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label scenarios for every (K, L) pair and write NDJSON shards.
    GenDataset(GenArgs),
    /// Train the transformer on a dataset manifest.
    Train(TrainArgs),
    /// Predict UL and DL powers (K×2 matrix in mW) for one scenario.
    Infer(InferArgs),
    /// Solve both max-min problems for one scenario.
    Solve(SolveArgs),
    /// Score the model against optimal, EPA and FPA powers on test samples.
    Eval(EvalArgs),
    /// Mean per-UE SE as the number of UEs varies.
    SweepK(SweepKArgs),
    /// Mean per-UE SE as the number of APs varies.
    SweepL(SweepLArgs),
    /// Model inference time against the label pipeline.
    Bench(BenchArgs),
    /// Operation-count estimate of inference or training.
    Complexity(ComplexityArgs),
    /// CDF tables and charts from evaluation records.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub l: Vec<usize>,
    /// Samples per (K, L) pair.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 0)]
    pub refine: usize,
    /// Also write train.json and test.json with this training fraction.
    #[arg(long)]
    pub split: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest inside the dataset directory; train.json when present.
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Model configuration JSON; defaults apply to missing fields.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// One extra epoch over all configurations in shuffled order.
    #[arg(long)]
    pub interleaved: bool,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON with `ue_xy` and `ap_xy` in meters.
    #[arg(long, conflicts_with_all = ["k", "l"])]
    pub scenario: Option<PathBuf>,
    /// Sample a scenario with this many UEs instead.
    #[arg(long, requires = "l")]
    pub k: Option<usize>,
    #[arg(long, requires = "k")]
    pub l: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 500)]
    pub n_mc: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest inside the dataset directory; test.json when present.
    #[arg(long)]
    pub manifest: Option<String>,
    /// Evaluate at most this many samples, round robin over (K, L).
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = FPA_NU, allow_negative_numbers = true)]
    pub nu: f64,
}

#[derive(Debug, Args)]
pub struct SweepCommon {
    /// Without weights the predicted columns repeat the optimum.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 300)]
    pub n_mc: usize,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[arg(long, default_value_t = 16)]
    pub l: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,20,40")]
    pub k_list: Vec<usize>,
    #[command(flatten)]
    pub common: SweepCommon,
}

#[derive(Debug, Args)]
pub struct SweepLArgs {
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,9,16,25,36")]
    pub l_list: Vec<usize>,
    #[command(flatten)]
    pub common: SweepCommon,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub l: usize,
    #[arg(long, default_value_t = 300)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    #[arg(long)]
    pub k: u64,
    #[arg(long)]
    pub l: u64,
    /// Encoder layers M.
    #[arg(long, default_value_t = 2)]
    pub layers: u64,
    #[arg(long, default_value_t = 32)]
    pub d: u64,
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    /// infer or train.
    #[arg(long, default_value = "infer")]
    pub phase: Phase,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// NDJSON evaluation records written by `eval`.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub svg: bool,
}

/// Scenario file: positions in meters, optional seed for the channel draws.
#[derive(Debug, Deserialize)]
struct ScenarioFile {
    ue_xy: Vec<[f64; 2]>,
    ap_xy: Vec<[f64; 2]>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ComplexityReport {
    k: u64,
    l: u64,
    layers: u64,
    d: u64,
    batch: u64,
    phase: String,
    operations: u64,
}

fn network_config(path: Option<&Path>) -> anyhow::Result<NetworkConfig> {
    let cfg = match path {
        Some(p) => NetworkConfig::from_json_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => NetworkConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn scenario(args: &ScenarioArgs, cfg: &NetworkConfig, seed: u64) -> anyhow::Result<Scenario> {
    match (&args.scenario, args.k, args.l) {
        (Some(path), _, _) => {
            let f: ScenarioFile = serde_json::from_str(&fs::read_to_string(path)?)
                .with_context(|| format!("parsing scenario {}", path.display()))?;
            Ok(Scenario::from_positions(f.ue_xy, f.ap_xy, cfg.area_side, f.seed.unwrap_or(seed))?)
        }
        (None, Some(k), Some(l)) => Ok(sample_scenario(cfg, k, l, seed)?),
        _ => bail!("give either --scenario or both --k and --l"),
    }
}

fn weights(path: &Path) -> anyhow::Result<TransformerWeights> {
    load_weights(path).with_context(|| format!("loading weights {}", path.display()))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_manifest(dir: &Path, name: Option<&str>, preferred: &str) -> anyhow::Result<DatasetManifest> {
    let name = match name {
        Some(n) => n,
        None if dir.join(preferred).exists() => preferred,
        None => MANIFEST_FILE,
    };
    let path = dir.join(name);
    DatasetManifest::read(&path).with_context(|| format!("reading manifest {}", path.display()))
}

fn write_ndjson<T: Serialize>(items: &[T], path: &Path) -> anyhow::Result<()> {
    let mut text = String::new();
    for it in items {
        text += &serde_json::to_string(it)?;
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_records(path: &Path) -> anyhow::Result<Vec<EvalRecord>> {
    let reader = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    ensure!(!out.is_empty(), "{} holds no records", path.display());
    Ok(out)
}

/// Path of the training report written beside `weights`.
pub fn report_path(weights: &Path) -> PathBuf {
    let stem = weights.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "weights".into());
    weights.with_file_name(format!("{stem}.report.json"))
}

/// Takes samples round robin over (K, L) groups, in manifest order.
pub fn round_robin(samples: Vec<dataset::Sample>, limit: usize) -> Vec<dataset::Sample> {
    let mut groups: Vec<Vec<dataset::Sample>> = Vec::new();
    for s in samples {
        match groups.iter_mut().find(|g| g[0].k == s.k && g[0].l == s.l) {
            Some(g) => g.push(s),
            None => groups.push(vec![s]),
        }
    }
    let mut iters: Vec<_> = groups.into_iter().map(|g| g.into_iter()).collect();
    let mut out = Vec::new();
    while out.len() < limit {
        let before = out.len();
        for it in iters.iter_mut() {
            if out.len() == limit {
                break;
            }
            out.extend(it.next());
        }
        if out.len() == before {
            break;
        }
    }
    out
}

fn sweep_output(table: &SweepTable, out: Option<&Path>, svg: bool) -> anyhow::Result<()> {
    if let Some(dir) = out {
        export_sweep(table, dir, svg)?;
    }
    emit_json(table, None)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = network_config(cli.config.as_deref())?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::GenDataset(a) => {
            let dir = out.context("gen-dataset needs --out DIR")?;
            let opts = PipelineOptions { n_mc: a.n_mc, refine: a.refine, ..PipelineOptions::default() };
            let m = dataset::generate_dataset(&cfg, &a.k, &a.l, a.n, cli.seed, dir, &opts)?;
            if let Some(ratio) = a.split {
                let (train, test) = dataset::split_dataset(&m, ratio, cli.seed)?;
                train.write(&dir.join(TRAIN_FILE))?;
                test.write(&dir.join(TEST_FILE))?;
            }
            emit_json(&m, None)
        }
        Command::Train(a) => {
            let path = out.context("train needs --out WEIGHTS.json")?;
            let m = read_manifest(&a.data, a.manifest.as_deref(), TRAIN_FILE)?;
            let samples = dataset::load_samples(&m, &a.data)?;
            let model_cfg = match &a.model {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ModelConfig::default(),
            };
            let tc = TrainConfig {
                epochs_per_config: a.epochs,
                batch_size: a.batch,
                lr: a.lr,
                seed: cli.seed,
                interleaved_epoch: a.interleaved,
                ..TrainConfig::default()
            };
            let (w, mut report) = cellfree_nn::train(&samples, &m.config, &model_cfg, &tc)?;
            save_weights(&w, path)?;
            report.weights_file = Some(path.display().to_string());
            emit_json(&report, Some(&report_path(path)))?;
            emit_json(&report, None)
        }
        Command::Infer(a) => {
            let w = weights(&a.weights)?;
            let sc = scenario(&a.scenario, &cfg, cli.seed)?;
            emit_json(&predict(&w, &sc, &cfg)?.matrix(), out)
        }
        Command::Solve(a) => {
            let sc = scenario(&a.scenario, &cfg, cli.seed)?;
            let opts = PipelineOptions { n_mc: a.n_mc, ..PipelineOptions::default() };
            let s = solve_scenario(&cfg, &sc, &opts)?;
            emit_json(&serde_json::json!({ "scenario": sc, "ul": s.ul, "dl": s.dl }), out)
        }
        Command::Eval(a) => {
            let w = weights(&a.weights)?;
            let m = read_manifest(&a.data, a.manifest.as_deref(), TEST_FILE)?;
            let mut samples = dataset::load_samples(&m, &a.data)?;
            if let Some(n) = a.limit {
                samples = round_robin(samples, n);
            }
            ensure!(!samples.is_empty(), "no test samples selected");
            let records = evaluate(&w, &samples, &m.config, &m.pipeline, a.nu)?;
            if let Some(p) = out {
                write_ndjson(&records, p)?;
            }
            emit_json(&summarize(&records), None)
        }
        Command::SweepK(a) => {
            let w = a.common.weights.as_deref().map(weights).transpose()?;
            let opts = PipelineOptions { n_mc: a.common.n_mc, ..PipelineOptions::default() };
            let t = sweep_k(w.as_ref(), a.l, &a.k_list, a.common.samples, &cfg, &opts, cli.seed)?;
            sweep_output(&t, out, a.common.svg)
        }
        Command::SweepL(a) => {
            let w = a.common.weights.as_deref().map(weights).transpose()?;
            let opts = PipelineOptions { n_mc: a.common.n_mc, ..PipelineOptions::default() };
            let t = sweep_l(w.as_ref(), a.k, &a.l_list, a.common.samples, &cfg, &opts, cli.seed)?;
            sweep_output(&t, out, a.common.svg)
        }
        Command::Bench(a) => {
            let w = weights(&a.weights)?;
            let opts = PipelineOptions { n_mc: a.n_mc, ..PipelineOptions::default() };
            emit_json(&bench_runtime(&w, a.k, a.l, &cfg, &opts, a.reps, cli.seed)?, out)
        }
        Command::Complexity(a) => {
            let operations = theoretical_complexity(a.k, a.l, a.layers, a.d, a.batch, a.phase);
            let phase = match a.phase {
                Phase::Infer => "infer",
                Phase::Train => "train",
            };
            let r = ComplexityReport { k: a.k, l: a.l, layers: a.layers, d: a.d, batch: a.batch, phase: phase.into(), operations };
            emit_json(&r, out)
        }
        Command::Plot(a) => {
            let dir = out.context("plot needs --out DIR")?;
            let records = read_records(&a.records)?;
            let files = export_plots(&records, dir, a.svg)?;
            emit_json(&files, None)
        }
    }
}
