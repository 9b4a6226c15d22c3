//! From a deployment to solved powers: large-scale fading, channel
//! statistics, hardening coefficients and both max-min problems.

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelStats, CorrelationModel};
use crate::error::Result;
use crate::rng::{self, stream};
use crate::scenario::{self, CoherenceSplit, LargeScaleTable, NetworkConfig, Scenario};
use crate::se_engine::{self, Direction, HardeningCoeffsDL, HardeningCoeffsUL};
use crate::solvers::{self, PowerSolution, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    /// Monte-Carlo realizations per scenario.
    pub n_mc: usize,
    pub solver: SolverOptions,
    /// Extra rounds that rebuild the combiners at the last uplink solution.
    pub refine: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { n_mc: 500, solver: SolverOptions::default(), refine: 0 }
    }
}

/// Everything needed to score a power allocation on one scenario.
#[derive(Debug, Clone)]
pub struct Instance {
    pub scenario: Scenario,
    pub large: LargeScaleTable,
    pub split: CoherenceSplit,
    pub sigma2: f64,
    pub stats: ChannelStats,
    pub ul: HardeningCoeffsUL,
    pub dl: HardeningCoeffsDL,
    /// Uplink powers the combiners were computed at.
    pub filter_power: Vec<f64>,
    pub n_mc: usize,
}

impl Instance {
    /// Builds statistics and hardening coefficients, with filters frozen at
    /// full uplink power. All randomness derives from `scenario.seed`.
    pub fn build(cfg: &NetworkConfig, scenario: &Scenario, n_mc: usize) -> Result<Self> {
        cfg.validate()?;
        let model: CorrelationModel = cfg.correlation.parse()?;
        let split = scenario::tau_split(cfg.tau_c, scenario.k)?;
        let sigma2 = cfg.noise_power_mw();
        let large = LargeScaleTable::compute(scenario, cfg)?;
        let r_eff = channel::build_covariance(&large, scenario, model, cfg.n_antennas);
        let stats = ChannelStats::new(
            r_eff,
            scenario.k,
            scenario.l,
            cfg.n_antennas,
            split.tau_p,
            cfg.pilot_power_mw(),
            sigma2,
        )?;
        let filter_power = vec![cfg.p_ul_max; scenario.k];
        let mut inst = Self {
            scenario: scenario.clone(),
            large,
            split,
            sigma2,
            stats,
            ul: HardeningCoeffsUL { a: vec![], b: vec![], c: vec![], n_mc: 0 },
            dl: HardeningCoeffsDL { a_bar: vec![], b_bar: vec![], n_mc: 0 },
            filter_power,
            n_mc,
        };
        inst.rebuild_coefficients(inst.filter_power.clone())?;
        Ok(inst)
    }

    pub fn rebuild_coefficients(&mut self, filter_power: Vec<f64>) -> Result<()> {
        let mc_seed = rng::derive_seed(self.scenario.seed, &[stream::MONTE_CARLO]);
        let (ul, dl) = se_engine::mc_hardening(&self.stats, &filter_power, self.n_mc, mc_seed)?;
        self.ul = ul;
        self.dl = dl;
        self.filter_power = filter_power;
        Ok(())
    }

    pub fn se(&self, p: &[f64], direction: Direction) -> Result<Vec<f64>> {
        Ok(match direction {
            Direction::Uplink => se_engine::se_from_sinr(&se_engine::sinr_ul(p, &self.ul, self.sigma2)?, self.split.prelog_ul()),
            Direction::Downlink => se_engine::se_from_sinr(&se_engine::sinr_dl(p, &self.dl, self.sigma2)?, self.split.prelog_dl()),
        })
    }

    pub fn solve_ul(&self, cfg: &NetworkConfig, opts: &SolverOptions) -> Result<PowerSolution> {
        solvers::maxmin_ul(&self.ul, self.sigma2, cfg.p_ul_max, &self.split, opts)
    }

    pub fn solve_dl(&self, cfg: &NetworkConfig, opts: &SolverOptions) -> Result<PowerSolution> {
        solvers::maxmin_dl(&self.dl, self.sigma2, cfg.dl_budget(self.scenario.l), &self.split, opts)
    }
}

/// Solved uplink and downlink max-min allocations for one scenario.
#[derive(Debug, Clone)]
pub struct Solved {
    pub instance: Instance,
    pub ul: PowerSolution,
    pub dl: PowerSolution,
}

/// Runs the full label pipeline on a scenario.
pub fn solve_scenario(cfg: &NetworkConfig, scenario: &Scenario, opts: &PipelineOptions) -> Result<Solved> {
    let mut instance = Instance::build(cfg, scenario, opts.n_mc)?;
    let mut ul = instance.solve_ul(cfg, &opts.solver)?;
    for _ in 0..opts.refine {
        instance.rebuild_coefficients(ul.p.p.clone())?;
        ul = instance.solve_ul(cfg, &opts.solver)?;
    }
    let dl = instance.solve_dl(cfg, &opts.solver)?;
    Ok(Solved { instance, ul, dl })
}
