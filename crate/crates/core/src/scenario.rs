//! Deployment geometry, large-scale fading, noise power and the coherence
//! block split.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Physical-layer parameters of a square cell-free deployment.
///
/// Every field has a default, so a JSON file only needs to list the values
/// it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Side of the square coverage area in meters.
    pub area_side: f64,
    /// Antennas per AP.
    pub n_antennas: usize,
    /// Maximum uplink power per UE in mW.
    pub p_ul_max: f64,
    /// Maximum downlink power per AP in mW.
    pub p_dl_max_per_ap: f64,
    /// Coherence block length in channel uses.
    pub tau_c: usize,
    pub carrier_ghz: f64,
    pub pathloss_exponent: f64,
    /// Pathloss at the 1 m reference distance in dB.
    pub pathloss_intercept_db: f64,
    /// AP/UE height difference in meters.
    pub height_diff_m: f64,
    /// Shadow fading variance in dB².
    pub shadow_var_db: f64,
    /// Shadowing decorrelation distance in meters.
    pub shadow_decorr_m: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    /// Spatial correlation model tag, see [`crate::channel::CorrelationModel`].
    pub correlation: String,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            area_side: 500.0,
            n_antennas: 4,
            p_ul_max: 100.0,
            p_dl_max_per_ap: 200.0,
            tau_c: 200,
            carrier_ghz: 2.0,
            pathloss_exponent: 3.67,
            pathloss_intercept_db: -30.5,
            height_diff_m: 10.0,
            shadow_var_db: 4.0,
            shadow_decorr_m: 9.0,
            bandwidth_hz: 2e7,
            noise_figure_db: 7.0,
            correlation: "uncorrelated".to_string(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.area_side > 0.0) {
            return fail("area_side must be positive");
        }
        if self.n_antennas == 0 {
            return fail("n_antennas must be at least 1");
        }
        if !(self.p_ul_max > 0.0) || !(self.p_dl_max_per_ap > 0.0) {
            return fail("power limits must be positive");
        }
        if self.tau_c < 2 {
            return fail("tau_c must be at least 2");
        }
        if !(self.shadow_var_db >= 0.0) || !(self.shadow_decorr_m > 0.0) {
            return fail("shadowing parameters out of range");
        }
        if !(self.bandwidth_hz > 0.0) {
            return fail("bandwidth must be positive");
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Noise power over the configured bandwidth in mW.
    pub fn noise_power_mw(&self) -> f64 {
        db_to_linear(noise_power_dbm(self.bandwidth_hz, self.noise_figure_db))
    }

    /// Uplink pilot power; pilots are sent at full UE power.
    pub fn pilot_power_mw(&self) -> f64 {
        self.p_ul_max
    }

    /// Total downlink budget Σ_l P_l,max for `l` APs.
    pub fn dl_budget(&self, l: usize) -> f64 {
        l as f64 * self.p_dl_max_per_ap
    }
}

/// UE and AP positions of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub k: usize,
    pub l: usize,
    pub ue_xy: Vec<[f64; 2]>,
    pub ap_xy: Vec<[f64; 2]>,
    pub seed: u64,
}

impl Scenario {
    /// Builds a scenario from explicit positions, checking them against the area.
    pub fn from_positions(ue_xy: Vec<[f64; 2]>, ap_xy: Vec<[f64; 2]>, area_side: f64, seed: u64) -> Result<Self> {
        if ue_xy.is_empty() || ap_xy.is_empty() {
            return Err(Error::InvalidArgument("need at least one UE and one AP".into()));
        }
        let inside = |p: &[f64; 2]| p.iter().all(|c| (0.0..=area_side).contains(c));
        if !ue_xy.iter().chain(ap_xy.iter()).all(inside) {
            return Err(Error::InvalidArgument("position outside the coverage area".into()));
        }
        Ok(Self { k: ue_xy.len(), l: ap_xy.len(), ue_xy, ap_xy, seed })
    }

    /// 3-D distance between UE `k` and AP `l`.
    pub fn distance_3d(&self, k: usize, l: usize, height_diff_m: f64) -> f64 {
        let [ux, uy] = self.ue_xy[k];
        let [ax, ay] = self.ap_xy[l];
        ((ux - ax).powi(2) + (uy - ay).powi(2) + height_diff_m * height_diff_m).sqrt()
    }

    /// Azimuth of UE `k` seen from AP `l`, in radians.
    pub fn azimuth(&self, k: usize, l: usize) -> f64 {
        let [ux, uy] = self.ue_xy[k];
        let [ax, ay] = self.ap_xy[l];
        (uy - ay).atan2(ux - ax)
    }

    /// Same deployment with the UEs listed in `perm` order.
    pub fn permute_ues(&self, perm: &[usize]) -> Self {
        Self { ue_xy: perm.iter().map(|&i| self.ue_xy[i]).collect(), ..self.clone() }
    }

    pub fn permute_aps(&self, perm: &[usize]) -> Self {
        Self { ap_xy: perm.iter().map(|&i| self.ap_xy[i]).collect(), ..self.clone() }
    }
}

/// Draws K UE and L AP positions uniformly over the square.
pub fn sample_scenario(cfg: &NetworkConfig, k: usize, l: usize, seed: u64) -> Result<Scenario> {
    if k == 0 || l == 0 {
        return Err(Error::InvalidArgument(format!("K and L must be positive (got K={k}, L={l})")));
    }
    let side = cfg.area_side;
    let draw = |n: usize, tag: u64| {
        let mut r = rng::rng_from(rng::derive_seed(seed, &[tag]));
        (0..n)
            .map(|_| [rand::Rng::random::<f64>(&mut r) * side, rand::Rng::random::<f64>(&mut r) * side])
            .collect::<Vec<_>>()
    };
    Ok(Scenario { k, l, ue_xy: draw(k, stream::UE_POSITIONS), ap_xy: draw(l, stream::AP_POSITIONS), seed })
}

/// Pathloss in dB at 3-D distance `d3d` (meters).
pub fn pathloss_db(d3d: f64, cfg: &NetworkConfig) -> f64 {
    cfg.pathloss_intercept_db - 10.0 * cfg.pathloss_exponent * d3d.log10()
}

/// Thermal noise power in dBm.
pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Spatially correlated shadow fading, returned as a K×L matrix in dB.
///
/// Per AP the K-vector of shadow terms has covariance
/// `var_db · 2^(-d(k,i)/decorr_m)`; different APs are independent.
pub fn sample_shadowing(ue_xy: &[[f64; 2]], l: usize, shadow_var_db: f64, decorr_m: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(decorr_m > 0.0) {
        return Err(Error::InvalidArgument("decorrelation distance must be positive".into()));
    }
    let k = ue_xy.len();
    if shadow_var_db == 0.0 {
        return Ok(vec![vec![0.0; l]; k]);
    }
    let cov = DMatrix::from_fn(k, k, |a, b| {
        let d = ((ue_xy[a][0] - ue_xy[b][0]).powi(2) + (ue_xy[a][1] - ue_xy[b][1]).powi(2)).sqrt();
        shadow_var_db * 2f64.powf(-d / decorr_m)
    });
    let factor = jittered_cholesky(&cov, shadow_var_db)?;

    let mut rng = rng::rng_from(rng::derive_seed(seed, &[stream::SHADOWING]));
    let mut out = vec![vec![0.0; l]; k];
    for ap in 0..l {
        let z = DVector::from_fn(k, |_, _| rng::standard_normal(&mut rng));
        let f = &factor * z;
        for (ue, row) in out.iter_mut().enumerate() {
            row[ap] = f[ue];
        }
    }
    Ok(out)
}

// Co-located UEs make the covariance singular; a small diagonal load fixes that.
fn jittered_cholesky(cov: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    for jitter in [1e-12, 1e-10, 1e-8, 1e-6] {
        let loaded = cov + DMatrix::identity(cov.nrows(), cov.ncols()) * (jitter * scale);
        if let Some(ch) = loaded.cholesky() {
            return Ok(ch.l());
        }
    }
    Err(Error::NotPsd("shadowing covariance (degenerate geometry)".into()))
}

/// Large-scale fading gains, indexed `[ue][ap]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleTable {
    pub beta: Vec<Vec<f64>>,
    pub beta_db: Vec<Vec<f64>>,
    pub shadow_db: Vec<Vec<f64>>,
}

impl LargeScaleTable {
    pub fn compute(scenario: &Scenario, cfg: &NetworkConfig) -> Result<Self> {
        let shadow_db =
            sample_shadowing(&scenario.ue_xy, scenario.l, cfg.shadow_var_db, cfg.shadow_decorr_m, scenario.seed)?;
        Ok(Self::with_shadowing(scenario, cfg, shadow_db))
    }

    pub fn with_shadowing(scenario: &Scenario, cfg: &NetworkConfig, shadow_db: Vec<Vec<f64>>) -> Self {
        let beta_db: Vec<Vec<f64>> = (0..scenario.k)
            .map(|k| {
                (0..scenario.l)
                    .map(|l| pathloss_db(scenario.distance_3d(k, l, cfg.height_diff_m), cfg) + shadow_db[k][l])
                    .collect()
            })
            .collect();
        let beta = beta_db.iter().map(|row| row.iter().map(|&db| db_to_linear(db)).collect()).collect();
        Self { beta, beta_db, shadow_db }
    }

    /// Σ_l β_lk for every UE.
    pub fn aggregate_gains(&self) -> Vec<f64> {
        self.beta.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Split of the coherence block into pilot, uplink and downlink channel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherenceSplit {
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_u: usize,
    pub tau_d: usize,
}

impl CoherenceSplit {
    pub fn prelog_ul(&self) -> f64 {
        self.tau_u as f64 / self.tau_c as f64
    }

    pub fn prelog_dl(&self) -> f64 {
        self.tau_d as f64 / self.tau_c as f64
    }
}

/// One pilot per UE; the remaining uses are split evenly with the odd one
/// going to the downlink.
pub fn tau_split(tau_c: usize, k: usize) -> Result<CoherenceSplit> {
    if k >= tau_c {
        return Err(Error::CoherenceOverload { k, tau_c });
    }
    let tau_p = k;
    let tau_u = (tau_c - tau_p) / 2;
    Ok(CoherenceSplit { tau_c, tau_p, tau_u, tau_d: tau_c - tau_p - tau_u })
}
