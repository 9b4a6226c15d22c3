//! Scores predicted, optimal, EPA and FPA powers on shared coefficients.

use serde::{Deserialize, Serialize};

use cellfree_core::dataset::Sample;
use cellfree_core::pipeline::{Instance, PipelineOptions};
use cellfree_core::scenario::{NetworkConfig, Scenario};
use cellfree_core::se_engine::Direction;
use cellfree_core::solvers;
use cellfree_nn::model::predict;
use cellfree_nn::TransformerWeights;

use crate::stats;

/// Default FPA exponent.
pub const FPA_NU: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schemes<T> {
    pub predicted: T,
    pub optimal: T,
    pub epa: T,
    pub fpa: T,
}

impl<T> Schemes<T> {
    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Schemes<U> {
        Schemes { predicted: f(&self.predicted), optimal: f(&self.optimal), epa: f(&self.epa), fpa: f(&self.fpa) }
    }

    pub fn named(&self) -> [(&'static str, &T); 4] {
        [("predicted", &self.predicted), ("optimal", &self.optimal), ("epa", &self.epa), ("fpa", &self.fpa)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    /// Powers in mW.
    pub p: Schemes<Vec<f64>>,
    /// Per-UE SE in bit/s/Hz.
    pub se: Schemes<Vec<f64>>,
    pub min_se: Schemes<f64>,
    /// min-SE(predicted) / min-SE(optimal).
    pub ratio: f64,
}

impl DirectionRecord {
    pub fn mean_se(&self) -> Schemes<f64> {
        self.se.map(|v| stats::mean(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub ul: DirectionRecord,
    pub dl: DirectionRecord,
}

impl EvalRecord {
    pub fn direction(&self, d: Direction) -> &DirectionRecord {
        match d {
            Direction::Uplink => &self.ul,
            Direction::Downlink => &self.dl,
        }
    }
}

fn direction_record(inst: &Instance, d: Direction, p: Schemes<Vec<f64>>) -> cellfree_core::Result<DirectionRecord> {
    let se = Schemes {
        predicted: inst.se(&p.predicted, d)?,
        optimal: inst.se(&p.optimal, d)?,
        epa: inst.se(&p.epa, d)?,
        fpa: inst.se(&p.fpa, d)?,
    };
    let min_se = se.map(|v| v.iter().copied().fold(f64::INFINITY, f64::min));
    let ratio = if min_se.optimal > 0.0 { min_se.predicted / min_se.optimal } else { 0.0 };
    Ok(DirectionRecord { p, se, min_se, ratio })
}

/// Scores every scheme on `inst`. `optimal` holds the (UL, DL) optimum for
/// these coefficients.
pub fn evaluate_instance(
    weights: Option<&TransformerWeights>,
    inst: &Instance,
    optimal: (Vec<f64>, Vec<f64>),
    cfg: &NetworkConfig,
    nu: f64,
) -> anyhow::Result<EvalRecord> {
    let (k, l) = (inst.scenario.k, inst.scenario.l);
    let (pred_ul, pred_dl) = match weights {
        Some(w) => {
            let p = predict(w, &inst.scenario, cfg)?;
            (p.p_ul, p.p_dl)
        }
        None => (optimal.0.clone(), optimal.1.clone()),
    };
    let ul = Schemes {
        predicted: pred_ul,
        optimal: optimal.0,
        epa: solvers::epa(Direction::Uplink, k, l, cfg).p,
        fpa: solvers::fpa(&inst.large, nu, Direction::Uplink, cfg).p,
    };
    let dl = Schemes {
        predicted: pred_dl,
        optimal: optimal.1,
        epa: solvers::epa(Direction::Downlink, k, l, cfg).p,
        fpa: solvers::fpa(&inst.large, nu, Direction::Downlink, cfg).p,
    };
    Ok(EvalRecord {
        k,
        l,
        seed: inst.scenario.seed,
        ul: direction_record(inst, Direction::Uplink, ul)?,
        dl: direction_record(inst, Direction::Downlink, dl)?,
    })
}

/// Builds coefficients and solves both problems for a fresh scenario.
pub fn solve_and_evaluate(
    weights: Option<&TransformerWeights>,
    scenario: &Scenario,
    cfg: &NetworkConfig,
    opts: &PipelineOptions,
    nu: f64,
) -> anyhow::Result<EvalRecord> {
    let solved = cellfree_core::pipeline::solve_scenario(cfg, scenario, opts)?;
    anyhow::ensure!(solved.ul.converged && solved.dl.converged, "solver did not converge for seed {}", scenario.seed);
    evaluate_instance(weights, &solved.instance, (solved.ul.p.p, solved.dl.p.p), cfg, nu)
}

/// Evaluates stored test samples. The optimum is the stored label, scored
/// on coefficients rebuilt from the sample seed with `opts.n_mc`
/// realizations; with the labelling `n_mc` these are the labelling
/// coefficients exactly.
pub fn evaluate(
    weights: &TransformerWeights,
    samples: &[Sample],
    cfg: &NetworkConfig,
    opts: &PipelineOptions,
    nu: f64,
) -> anyhow::Result<Vec<EvalRecord>> {
    samples
        .iter()
        .map(|s| {
            let mut inst = Instance::build(cfg, &s.scenario(), opts.n_mc)?;
            if opts.refine > 0 {
                // Labels were solved on refined filters; replay the same rounds.
                let mut ul = inst.solve_ul(cfg, &opts.solver)?;
                for _ in 0..opts.refine {
                    inst.rebuild_coefficients(ul.p.p.clone())?;
                    ul = inst.solve_ul(cfg, &opts.solver)?;
                }
            }
            evaluate_instance(Some(weights), &inst, (s.p_star_ul.clone(), s.p_star_dl.clone()), cfg, nu)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub median_ratio: f64,
    pub median_min_se: Schemes<f64>,
    pub mean_min_se: Schemes<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub ul: DirectionSummary,
    pub dl: DirectionSummary,
}

pub fn summarize(records: &[EvalRecord]) -> EvalSummary {
    let dir = |d: Direction| {
        let rs: Vec<&DirectionRecord> = records.iter().map(|r| r.direction(d)).collect();
        let col = |f: &dyn Fn(&DirectionRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let min_se = Schemes {
            predicted: col(&|r| r.min_se.predicted),
            optimal: col(&|r| r.min_se.optimal),
            epa: col(&|r| r.min_se.epa),
            fpa: col(&|r| r.min_se.fpa),
        };
        DirectionSummary {
            median_ratio: stats::median(&col(&|r| r.ratio)),
            median_min_se: min_se.map(|v| stats::median(v)),
            mean_min_se: min_se.map(|v| stats::mean(v)),
        }
    };
    EvalSummary { n: records.len(), ul: dir(Direction::Uplink), dl: dir(Direction::Downlink) }
}
