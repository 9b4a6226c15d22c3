//! MMSE combining/precoding and the Monte-Carlo expectations that turn the
//! uplink and downlink SINR into deterministic functions of the powers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelStats, CMat, CVec};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(rename = "ul")]
    Uplink,
    #[serde(rename = "dl")]
    Downlink,
}

/// Per-UE transmit powers in mW for one link direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerVector {
    pub p: Vec<f64>,
    pub direction: Direction,
}

impl PowerVector {
    pub fn new(p: Vec<f64>, direction: Direction) -> Self {
        Self { p, direction }
    }

    /// Checks nonnegativity and the direction's power constraint, with a
    /// relative slack `tol`.
    pub fn check(&self, p_ul_max: f64, dl_budget: f64, tol: f64) -> Result<()> {
        if self.p.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument("negative or non-finite power".into()));
        }
        match self.direction {
            Direction::Uplink if self.p.iter().any(|&x| x > p_ul_max * (1.0 + tol)) => {
                Err(Error::InvalidArgument("uplink power above P_max".into()))
            }
            Direction::Downlink if self.p.iter().sum::<f64>() > dl_budget * (1.0 + tol) => {
                Err(Error::InvalidArgument("downlink powers exceed the budget".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Uplink expectations: `a_k = |E{v_k^H h_k}|²`, `b_ki = E{|v_k^H h_i|²}`,
/// `c_k = E{‖v_k‖²}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardeningCoeffsUL {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub n_mc: usize,
}

/// Downlink expectations: `ā_k = |E{h_k^H w_k}|²`, `b̄_ki = E{|h_k^H w_i|²}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardeningCoeffsDL {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<Vec<f64>>,
    pub n_mc: usize,
}

/// SINR of the form `p_k g_k / (Σ_i p_i m_ki − p_k g_k + n_k)`, shared by
/// both link directions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub signal: Vec<f64>,
    pub cross: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
}

impl LinkGains {
    pub fn k(&self) -> usize {
        self.signal.len()
    }

    /// Interference-plus-noise seen by UE `k`.
    pub fn interference(&self, p: &[f64], k: usize) -> f64 {
        let total: f64 = self.cross[k].iter().zip(p).map(|(m, pi)| m * pi).sum();
        total - p[k] * self.signal[k] + self.noise[k]
    }

    pub fn sinr(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.k() {
            return Err(Error::InvalidArgument(format!("power vector has {} entries, expected {}", p.len(), self.k())));
        }
        (0..self.k())
            .map(|k| {
                let den = self.interference(p, k);
                if den > 0.0 {
                    Ok(p[k] * self.signal[k] / den)
                } else {
                    Err(Error::InvalidCoefficients(format!("nonpositive SINR denominator {den} for UE {k}")))
                }
            })
            .collect()
    }
}

impl HardeningCoeffsUL {
    pub fn gains(&self, sigma2: f64) -> LinkGains {
        LinkGains { signal: self.a.clone(), cross: self.b.clone(), noise: self.c.iter().map(|c| sigma2 * c).collect() }
    }
}

impl HardeningCoeffsDL {
    pub fn gains(&self, sigma2: f64) -> LinkGains {
        LinkGains { signal: self.a_bar.clone(), cross: self.b_bar.clone(), noise: vec![sigma2; self.a_bar.len()] }
    }
}

pub fn sinr_ul(p: &[f64], coeffs: &HardeningCoeffsUL, sigma2: f64) -> Result<Vec<f64>> {
    coeffs.gains(sigma2).sinr(p)
}

pub fn sinr_dl(p: &[f64], coeffs: &HardeningCoeffsDL, sigma2: f64) -> Result<Vec<f64>> {
    coeffs.gains(sigma2).sinr(p)
}

/// `prelog · log2(1 + SINR)` per UE, in bit/s/Hz.
pub fn se_from_sinr(sinr: &[f64], prelog: f64) -> Vec<f64> {
    sinr.iter().map(|s| prelog * (1.0 + s).log2()).collect()
}

/// Per-AP blocks of `Z = Σ_i p_i (R_i − Φ_i) + σ² I`; the collective matrix
/// is block diagonal.
pub fn combiner_noise_blocks(stats: &ChannelStats, p_ul: &[f64], sigma2: f64) -> Vec<CMat> {
    let n = stats.n;
    (0..stats.l)
        .map(|l| {
            let mut z = CMat::identity(n, n) * Complex64::from(sigma2);
            for (k, &pk) in p_ul.iter().enumerate() {
                let i = stats.idx(k, l);
                z += (&stats.r_eff[i] - &stats.phi[i]) * Complex64::from(pk);
            }
            z
        })
        .collect()
}

/// MMSE combiners `v_k = (Σ_i p_i ĥ_i ĥ_i^H + Z)^{-1} ĥ_k` for all UEs.
pub fn mmse_combiner(h_hat: &[CVec], stats: &ChannelStats, p_ul: &[f64], sigma2: f64) -> Result<Vec<CVec>> {
    let z = combiner_noise_blocks(stats, p_ul, sigma2);
    combine_with_blocks(h_hat, &z, stats.n, p_ul)
}

fn combine_with_blocks(h_hat: &[CVec], z_blocks: &[CMat], n: usize, p_ul: &[f64]) -> Result<Vec<CVec>> {
    let k = h_hat.len();
    let dim = z_blocks.len() * n;
    let mut system = CMat::zeros(dim, dim);
    for (l, zl) in z_blocks.iter().enumerate() {
        system.view_mut((l * n, l * n), (n, n)).copy_from(zl);
    }
    let mut rhs = CMat::zeros(dim, k);
    for (i, (hi, &pi)) in h_hat.iter().zip(p_ul).enumerate() {
        system.ger(Complex64::from(pi), hi, &hi.conjugate(), Complex64::from(1.0));
        rhs.set_column(i, hi);
    }
    let chol = system.cholesky().ok_or_else(|| Error::Singular("MMSE combining matrix".into()))?;
    let v = chol.solve(&rhs);
    Ok((0..k).map(|i| v.column(i).into_owned()).collect())
}

/// Unit-norm precoders `w_k = v_k/‖v_k‖`.
pub fn normalize_precoders(v: &[CVec]) -> Result<Vec<CVec>> {
    v.iter()
        .enumerate()
        .map(|(k, vk)| {
            let norm = vk.norm();
            if norm > 0.0 {
                Ok(vk.unscale(norm))
            } else {
                Err(Error::DegenerateCombiner(k))
            }
        })
        .collect()
}

/// Running sums behind the hardening coefficients. Realizations are added
/// in call order, so the result is reproducible bit-for-bit.
#[derive(Debug, Clone)]
pub struct HardeningAccumulator {
    k: usize,
    count: usize,
    vh: Vec<Complex64>,
    b: Vec<Vec<f64>>,
    c: Vec<f64>,
    hw: Vec<Complex64>,
    b_bar: Vec<Vec<f64>>,
}

impl HardeningAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            count: 0,
            vh: vec![Complex64::new(0.0, 0.0); k],
            b: vec![vec![0.0; k]; k],
            c: vec![0.0; k],
            hw: vec![Complex64::new(0.0, 0.0); k],
            b_bar: vec![vec![0.0; k]; k],
        }
    }

    /// Adds one realization of true channels `h` and combiners `v`.
    pub fn add(&mut self, h: &[CVec], v: &[CVec]) -> Result<()> {
        let k = self.k;
        // inner[k][i] = v_k^H h_i
        let inner: Vec<Vec<Complex64>> = v.iter().map(|vk| h.iter().map(|hi| vk.dotc(hi)).collect()).collect();
        let norms: Vec<f64> = v.iter().map(|vk| vk.norm_squared()).collect();
        for (idx, &n2) in norms.iter().enumerate() {
            if !(n2 > 0.0) {
                return Err(Error::DegenerateCombiner(idx));
            }
        }
        for a in 0..k {
            self.vh[a] += inner[a][a];
            self.c[a] += norms[a];
            // h_a^H w_a = conj(v_a^H h_a) / ‖v_a‖
            self.hw[a] += inner[a][a].conj() / norms[a].sqrt();
            for i in 0..k {
                self.b[a][i] += inner[a][i].norm_sqr();
                // |h_a^H w_i|² = |v_i^H h_a|² / ‖v_i‖²
                self.b_bar[a][i] += inner[i][a].norm_sqr() / norms[i];
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(&self) -> (HardeningCoeffsUL, HardeningCoeffsDL) {
        let n = self.count.max(1) as f64;
        let mean_rows = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|x| x / n).collect()).collect();
        let ul = HardeningCoeffsUL {
            a: self.vh.iter().map(|z| (z / n).norm_sqr()).collect(),
            b: mean_rows(&self.b),
            c: self.c.iter().map(|x| x / n).collect(),
            n_mc: self.count,
        };
        let dl = HardeningCoeffsDL {
            a_bar: self.hw.iter().map(|z| (z / n).norm_sqr()).collect(),
            b_bar: mean_rows(&self.b_bar),
            n_mc: self.count,
        };
        (ul, dl)
    }
}

/// Monte-Carlo hardening coefficients with the combiners computed at the
/// fixed uplink powers `p_filter`.
pub fn mc_hardening(
    stats: &ChannelStats,
    p_filter: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<(HardeningCoeffsUL, HardeningCoeffsDL)> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    if p_filter.len() != stats.k {
        return Err(Error::InvalidArgument("filter power vector length differs from K".into()));
    }
    let z = combiner_noise_blocks(stats, p_filter, stats.sigma2);
    let mut acc = HardeningAccumulator::new(stats.k);
    for r in 0..n_mc {
        let rs = rng::derive_seed(seed, &[stream::MONTE_CARLO, r as u64]);
        let draw = channel::draw_channels(stats, rs);
        let h_hat = channel::mmse_estimate(&draw, stats, rs);
        let v = combine_with_blocks(&h_hat, &z, stats.n, p_filter)?;
        acc.add(&draw.h, &v)?;
    }
    Ok(acc.finish())
}
