//! Spatial covariance, small-scale fading draws and MMSE channel estimation.
//!
//! Channels are kept in collective form: UE `k` owns one vector of length
//! `L·N` that stacks the per-AP channels `h_1k, …, h_Lk`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scenario::{LargeScaleTable, Scenario};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Per-AP spatial correlation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CorrelationModel {
    /// `R = I_N`.
    Uncorrelated,
    /// Half-wavelength ULA with a Gaussian angular spread around the UE
    /// azimuth; `asd_deg` is the angular standard deviation in degrees.
    LocalScattering { asd_deg: f64 },
}

impl std::str::FromStr for CorrelationModel {
    type Err = Error;

    /// Accepts `uncorrelated`, `local-scattering:<deg>` or `local-scattering(<deg>)`.
    fn from_str(tag: &str) -> Result<Self> {
        let tag = tag.trim();
        if tag == "uncorrelated" {
            return Ok(Self::Uncorrelated);
        }
        let arg = tag
            .strip_prefix("local-scattering:")
            .or_else(|| tag.strip_prefix("local-scattering(").and_then(|r| r.strip_suffix(')')));
        match arg.map(|a| a.trim().parse::<f64>()) {
            Some(Ok(asd_deg)) if asd_deg >= 0.0 => Ok(Self::LocalScattering { asd_deg }),
            _ => Err(Error::UnknownModel(tag.to_string())),
        }
    }
}

/// Normalized correlation matrix (unit diagonal, trace N) for one AP/UE pair.
pub fn correlation_matrix(model: CorrelationModel, n: usize, azimuth: f64) -> CMat {
    match model {
        CorrelationModel::Uncorrelated => CMat::identity(n, n),
        CorrelationModel::LocalScattering { asd_deg } => {
            let sigma = asd_deg.to_radians();
            let spacing = 0.5;
            CMat::from_fn(n, n, |m, p| {
                let dist = m as f64 - p as f64;
                let phase = 2.0 * PI * spacing * dist * azimuth.sin();
                let spread = (-0.5 * sigma * sigma * (2.0 * PI * spacing * dist * azimuth.cos()).powi(2)).exp();
                Complex64::from_polar(spread, phase)
            })
        }
    }
}

/// Effective covariances `β_lk·R_lk`, indexed like [`ChannelStats::idx`].
pub fn build_covariance(large: &LargeScaleTable, scenario: &Scenario, model: CorrelationModel, n: usize) -> Vec<CMat> {
    let mut out = Vec::with_capacity(scenario.k * scenario.l);
    for k in 0..scenario.k {
        for l in 0..scenario.l {
            let r = correlation_matrix(model, n, scenario.azimuth(k, l));
            out.push(r * Complex64::from(large.beta[k][l]));
        }
    }
    out
}

/// Second-order statistics of all AP/UE channels plus the precomputed
/// matrices needed to draw and estimate them.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub k: usize,
    pub l: usize,
    pub n: usize,
    pub r_eff: Vec<CMat>,
    /// Covariance Φ of the MMSE estimate.
    pub phi: Vec<CMat>,
    /// `R (R + s I)^{-1}` with `s = σ²/(τ_p ρ)`.
    pub estimator: Vec<CMat>,
    sqrt_r: Vec<CMat>,
    pub tau_p: usize,
    pub rho_pilot: f64,
    pub sigma2: f64,
}

impl ChannelStats {
    pub fn new(r_eff: Vec<CMat>, k: usize, l: usize, n: usize, tau_p: usize, rho_pilot: f64, sigma2: f64) -> Result<Self> {
        if r_eff.len() != k * l || r_eff.iter().any(|r| r.shape() != (n, n)) {
            return Err(Error::InvalidArgument("covariance array does not match K×L×N×N".into()));
        }
        if tau_p < k {
            return Err(Error::InvalidArgument(format!("tau_p = {tau_p} < K = {k}: pilots are not orthogonal")));
        }
        if !(rho_pilot > 0.0) || !(sigma2 >= 0.0) {
            return Err(Error::InvalidArgument("pilot power must be positive and noise nonnegative".into()));
        }
        let s = sigma2 / (tau_p as f64 * rho_pilot);
        let mut estimator = Vec::with_capacity(r_eff.len());
        let mut phi = Vec::with_capacity(r_eff.len());
        let mut sqrt_r = Vec::with_capacity(r_eff.len());
        for r in &r_eff {
            let q = r + CMat::identity(n, n) * Complex64::from(s);
            let q_inv = q.try_inverse().ok_or_else(|| Error::Singular("R + σ²/(τ_p ρ) I".into()))?;
            let a = r * q_inv;
            let p = &a * r;
            phi.push(hermitian_part(&p));
            estimator.push(a);
            sqrt_r.push(psd_sqrt(r)?);
        }
        Ok(Self { k, l, n, r_eff, phi, estimator, sqrt_r, tau_p, rho_pilot, sigma2 })
    }

    pub fn idx(&self, k: usize, l: usize) -> usize {
        k * self.l + l
    }

    /// Observation noise variance `σ²/(τ_p ρ)` after pilot despreading.
    pub fn pilot_noise_var(&self) -> f64 {
        self.sigma2 / (self.tau_p as f64 * self.rho_pilot)
    }

    /// Block-diagonal collective matrix `diag(M_1k, …, M_Lk)` built from a per-pair array.
    pub fn collective(&self, blocks: &[CMat], k: usize) -> CMat {
        let n = self.n;
        let mut out = CMat::zeros(self.l * n, self.l * n);
        for l in 0..self.l {
            out.view_mut((l * n, l * n), (n, n)).copy_from(&blocks[self.idx(k, l)]);
        }
        out
    }
}

fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::from(0.5)
}

/// Principal square root of a Hermitian PSD matrix.
pub fn psd_sqrt(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == Complex64::from(0.0)));
    if is_diagonal {
        let mut out = CMat::zeros(n, n);
        for i in 0..n {
            let d = m[(i, i)].re;
            if d < 0.0 {
                return Err(Error::NotPsd(format!("negative diagonal entry {d}")));
            }
            out[(i, i)] = Complex64::from(d.sqrt());
        }
        return Ok(out);
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut root = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-9 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd(format!("eigenvalue {lambda}")));
        }
        let s = Complex64::from(lambda.max(0.0).sqrt());
        for i in 0..n {
            root[(i, j)] *= s;
        }
    }
    Ok(&root * eig.eigenvectors.adjoint())
}

/// One realization of all channels.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    /// Collective channel `h_k` (length `L·N`) per UE.
    pub h: Vec<CVec>,
    /// The standard complex Gaussian draws behind `h`.
    pub g: Vec<CVec>,
}

fn block_mul(m: &CMat, x: &[Complex64], out: &mut [Complex64]) {
    let n = m.nrows();
    for i in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += m[(i, j)] * x[j];
        }
        out[i] = acc;
    }
}

/// Draws `h_lk = R_eff^{1/2} g_lk` with independent `g_lk ~ CN(0, I)`.
pub fn draw_channels(stats: &ChannelStats, seed: u64) -> ChannelDraw {
    let mut rng = rng::rng_from(rng::derive_seed(seed, &[stream::SMALL_SCALE]));
    let len = stats.l * stats.n;
    let n = stats.n;
    let mut h = Vec::with_capacity(stats.k);
    let mut g = Vec::with_capacity(stats.k);
    for k in 0..stats.k {
        let gk = CVec::from_fn(len, |_, _| rng::complex_gaussian(&mut rng));
        let mut hk = CVec::zeros(len);
        for l in 0..stats.l {
            let range = l * n..(l + 1) * n;
            block_mul(&stats.sqrt_r[stats.idx(k, l)], &gk.as_slice()[range.clone()], &mut hk.as_mut_slice()[range]);
        }
        h.push(hk);
        g.push(gk);
    }
    ChannelDraw { h, g }
}

/// MMSE estimates `ĥ_lk = R (R + s I)^{-1} (h_lk + n'_lk)` with
/// `n'_lk ~ CN(0, s I)`. The estimate covariance is `stats.phi`.
pub fn mmse_estimate(draw: &ChannelDraw, stats: &ChannelStats, seed: u64) -> Vec<CVec> {
    let mut rng = rng::rng_from(rng::derive_seed(seed, &[stream::PILOT_NOISE]));
    let noise_std = stats.pilot_noise_var().sqrt();
    let n = stats.n;
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    draw.h
        .iter()
        .enumerate()
        .map(|(k, hk)| {
            let mut est = CVec::zeros(hk.len());
            for l in 0..stats.l {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = hk[l * n + i] + rng::complex_gaussian(&mut rng) * noise_std;
                }
                block_mul(&stats.estimator[stats.idx(k, l)], &y, &mut est.as_mut_slice()[l * n..(l + 1) * n]);
            }
            est
        })
        .collect()
}
