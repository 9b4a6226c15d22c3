//! Max-min SINR power control for fixed hardening coefficients.
//!
//! Both link directions reduce to the same problem on [`LinkGains`]:
//! maximize the common SINR target `t` such that the minimal power vector
//! reaching `t` for every UE respects the power constraint. The minimal
//! vector is the fixed point of the standard interference function
//! `p_k ← t·(Σ_i p_i m_ki − p_k g_k + n_k)/g_k`, which increases
//! monotonically in `t`, so `t★` is found by bisection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{CoherenceSplit, LargeScaleTable, NetworkConfig};
use crate::se_engine::{Direction, HardeningCoeffsDL, HardeningCoeffsUL, LinkGains, PowerVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative width of the final bisection interval on `t`.
    pub bisect_tol: f64,
    /// Relative step size at which the fixed-point iteration stops.
    pub fp_tol: f64,
    /// Bisection steps.
    pub max_iter: usize,
    /// Fixed-point iterations per feasibility check.
    pub fp_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { bisect_tol: 1e-6, fp_tol: 1e-10, max_iter: 500, fp_max_iter: 200_000 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.bisect_tol > 0.0 && self.fp_tol > 0.0 && self.max_iter > 0 && self.fp_max_iter > 0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("solver tolerances and iteration limits must be positive".into()))
        }
    }
}

/// Power constraint of problem (UL) per-UE cap or (DL) total budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PowerLimit {
    PerUser(f64),
    SumBudget(f64),
}

impl PowerLimit {
    pub fn value(&self) -> f64 {
        match *self {
            Self::PerUser(v) | Self::SumBudget(v) => v,
        }
    }

    pub fn exceeded_by(&self, p: &[f64]) -> bool {
        match *self {
            Self::PerUser(cap) => p.iter().any(|&x| x > cap),
            Self::SumBudget(b) => p.iter().sum::<f64>() > b,
        }
    }

    /// Unused share of the constraint, relative to its value.
    pub fn slack(&self, p: &[f64]) -> f64 {
        match *self {
            Self::PerUser(cap) => (cap - p.iter().copied().fold(0.0, f64::max)) / cap,
            Self::SumBudget(b) => (b - p.iter().sum::<f64>()) / b,
        }
    }

    fn slack_target(&self) -> f64 {
        match self {
            Self::PerUser(_) => 1e-7,
            Self::SumBudget(_) => 1e-11,
        }
    }
}

/// Outcome of the fixed-point feasibility check at a SINR target.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// Componentwise-minimal powers reaching the target.
    Feasible(Vec<f64>),
    /// The target is reachable but only above the power limit.
    ExceedsLimit,
    /// No finite power vector reaches the target.
    Infeasible,
}

/// Result of a max-min solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub p: PowerVector,
    /// Common SINR reached by every UE.
    pub t_star: f64,
    pub min_se: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_constraint: String,
}

/// Normalized gain matrix `D` with `D_ki = m_ki/g_k` off the diagonal and
/// `(m_kk − g_k)/g_k` on it; the target `t` is reachable iff `t·ρ(D) < 1`.
fn gain_matrix(gains: &LinkGains) -> DMatrix<f64> {
    let k = gains.k();
    DMatrix::from_fn(k, k, |a, i| {
        let m = gains.cross[a][i] - if a == i { gains.signal[a] } else { 0.0 };
        m / gains.signal[a]
    })
}

fn spectral_radius(d: &DMatrix<f64>) -> f64 {
    d.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

const SPECTRAL_CHECK_MAX_K: usize = 64;
/// Iterations after which small instances switch to a direct linear solve.
const DIRECT_SOLVE_AFTER: usize = 5_000;
const DIVERGENCE_FACTOR: f64 = 1e6;

fn validate_gains(gains: &LinkGains) -> Result<()> {
    let k = gains.k();
    if k == 0 || gains.cross.len() != k || gains.noise.len() != k || gains.cross.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidCoefficients("coefficient shapes are inconsistent".into()));
    }
    let finite_nonneg = |x: &f64| x.is_finite() && *x >= 0.0;
    if !gains.signal.iter().all(finite_nonneg)
        || !gains.noise.iter().all(finite_nonneg)
        || !gains.cross.iter().flatten().all(finite_nonneg)
    {
        return Err(Error::InvalidCoefficients("coefficients must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Minimal power vector achieving SINR `t` for every UE, iterating the
/// interference function from `p = 0`.
///
/// With a `limit`, the iteration stops as soon as an iterate breaks it:
/// iterates grow monotonically towards the fixed point, so the fixed point
/// breaks it too.
pub fn feasibility_fixed_point(t: f64, gains: &LinkGains, opts: &SolverOptions, limit: Option<PowerLimit>) -> Result<Feasibility> {
    validate_gains(gains)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("SINR target must be nonnegative, got {t}")));
    }
    let k = gains.k();
    if t == 0.0 {
        return Ok(Feasibility::Feasible(vec![0.0; k]));
    }
    if gains.signal.contains(&0.0) {
        return Ok(Feasibility::Infeasible);
    }
    if k <= SPECTRAL_CHECK_MAX_K && t * spectral_radius(&gain_matrix(gains)) >= 1.0 - 1e-12 {
        return Ok(Feasibility::Infeasible);
    }
    fixed_point_from(t, gains, opts, limit, &vec![0.0; k]).map(|(f, _)| f)
}

// `start` must be a componentwise lower bound of the fixed point at `t`
// (zero, or the fixed point at a smaller target) for the limit test to hold.
fn fixed_point_from(
    t: f64,
    gains: &LinkGains,
    opts: &SolverOptions,
    limit: Option<PowerLimit>,
    start: &[f64],
) -> Result<(Feasibility, usize)> {
    let k = gains.k();
    let mut p = start.to_vec();
    let mut next = vec![0.0; k];
    let mut scale = limit.map(|l| l.value());
    let mut prev_step = 0.0;
    let budget = if k <= SPECTRAL_CHECK_MAX_K { opts.fp_max_iter.min(DIRECT_SOLVE_AFTER) } else { opts.fp_max_iter };
    for it in 1..=budget {
        for a in 0..k {
            next[a] = t * gains.interference(&p, a) / gains.signal[a];
        }
        if let Some(lim) = limit {
            if lim.exceeded_by(&next) {
                return Ok((Feasibility::ExceedsLimit, it));
            }
        }
        let peak = next.iter().copied().fold(0.0, f64::max);
        let reference = *scale.get_or_insert(peak);
        if peak > DIVERGENCE_FACTOR * reference {
            return Ok((Feasibility::Infeasible, it));
        }
        let step = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut p, &mut next);
        // Distance to the fixed point is at most step·c/(1 − c) for contraction factor c.
        let c = step / prev_step;
        prev_step = step;
        if step == 0.0 || (it > 1 && c < 1.0 && step * c / (1.0 - c) <= opts.fp_tol * peak && step <= opts.fp_tol * peak) {
            return Ok((Feasibility::Feasible(p), it));
        }
    }
    if k <= SPECTRAL_CHECK_MAX_K {
        return Ok((direct_fixed_point(t, gains, limit), budget));
    }
    Err(Error::Solver(format!("fixed-point iteration at t = {t} did not converge in {} steps", opts.fp_max_iter)))
}

/// Solves `(I − tD)p = t·u` with `u_k = n_k/g_k`. For `t·ρ(D) < 1` the
/// solution is the Neumann series limit of the iteration, hence nonnegative.
fn direct_fixed_point(t: f64, gains: &LinkGains, limit: Option<PowerLimit>) -> Feasibility {
    let d = gain_matrix(gains);
    if t * spectral_radius(&d) >= 1.0 {
        return Feasibility::Infeasible;
    }
    let k = gains.k();
    let a = DMatrix::identity(k, k) - d * t;
    let rhs = nalgebra::DVector::from_fn(k, |i, _| t * gains.noise[i] / gains.signal[i]);
    let Some(x) = a.lu().solve(&rhs) else {
        return Feasibility::Infeasible;
    };
    let p: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    match limit {
        Some(lim) if lim.exceeded_by(&p) => Feasibility::ExceedsLimit,
        _ => Feasibility::Feasible(p),
    }
}

/// Max-min SINR by bisection on the common target.
pub fn maxmin(gains: &LinkGains, limit: PowerLimit, prelog: f64, direction: Direction, opts: &SolverOptions) -> Result<PowerSolution> {
    validate_gains(gains)?;
    opts.validate()?;
    let k = gains.k();
    let cap = limit.value();
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument("power limit must be positive".into()));
    }
    if let Some(u) = gains.signal.iter().position(|&g| g == 0.0) {
        return Err(Error::Solver(format!("UE {u} has zero signal gain; only t = 0 is feasible")));
    }

    // Interference-free bound: SINR_k ≤ cap·g_k/n_k since m_kk ≥ g_k.
    let mut t_hi = (0..k)
        .filter(|&a| gains.noise[a] > 0.0)
        .map(|a| cap * gains.signal[a] / gains.noise[a])
        .fold(f64::INFINITY, f64::min);
    if k <= SPECTRAL_CHECK_MAX_K {
        let rho = spectral_radius(&gain_matrix(gains));
        if rho > 0.0 {
            t_hi = t_hi.min(1.0 / rho);
        }
    }
    if !t_hi.is_finite() {
        return Err(Error::Solver("noise-free and interference-free instance has unbounded SINR".into()));
    }

    let zeros = vec![0.0; k];
    let mut doublings = 0;
    while let (Feasibility::Feasible(_), _) = fixed_point_from(t_hi, gains, opts, Some(limit), &zeros)? {
        t_hi *= 2.0;
        doublings += 1;
        if doublings > 64 {
            return Err(Error::Solver("could not bracket the optimal SINR".into()));
        }
    }

    let mut t_lo = 0.0;
    let mut p_lo = zeros;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let width = t_hi - t_lo;
        let narrow = width <= opts.bisect_tol * t_lo;
        if narrow && limit.slack(&p_lo) <= limit.slack_target() {
            converged = true;
            break;
        }
        let mid = t_lo + 0.5 * width;
        if mid <= t_lo || mid >= t_hi {
            // Interval at machine resolution.
            converged = narrow;
            break;
        }
        iterations += 1;
        match fixed_point_from(mid, gains, opts, Some(limit), &p_lo)?.0 {
            Feasibility::Feasible(p) => {
                t_lo = mid;
                p_lo = p;
            }
            Feasibility::ExceedsLimit | Feasibility::Infeasible => t_hi = mid,
        }
    }

    // Scaling by α ≥ 1 raises every SINR, so the rescaled vector meets the
    // constraint with equality and can only improve on p_lo.
    let used = match limit {
        PowerLimit::PerUser(_) => p_lo.iter().copied().fold(0.0, f64::max),
        PowerLimit::SumBudget(_) => p_lo.iter().sum(),
    };
    if used > 0.0 && used < cap {
        let alpha = cap / used;
        p_lo.iter_mut().for_each(|x| *x = (*x * alpha).min(cap));
    }
    let sinr = gains.sinr(&p_lo)?;
    let t_star = sinr.iter().copied().fold(f64::INFINITY, f64::min);
    let active_constraint = match limit {
        PowerLimit::PerUser(cap) => {
            let (u, _) = p_lo.iter().enumerate().fold((0, f64::MIN), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
            format!("per-UE cap {cap} mW reached by UE {u}")
        }
        PowerLimit::SumBudget(b) => format!("sum budget {b} mW"),
    };
    Ok(PowerSolution {
        p: PowerVector::new(p_lo, direction),
        t_star,
        min_se: prelog * (1.0 + t_star).log2(),
        iterations,
        converged,
        active_constraint,
    })
}

/// Uplink max-min with per-UE cap `p_max`.
pub fn maxmin_ul(coeffs: &HardeningCoeffsUL, sigma2: f64, p_max: f64, split: &CoherenceSplit, opts: &SolverOptions) -> Result<PowerSolution> {
    maxmin(&coeffs.gains(sigma2), PowerLimit::PerUser(p_max), split.prelog_ul(), Direction::Uplink, opts)
}

/// Downlink max-min with total budget `budget`.
pub fn maxmin_dl(coeffs: &HardeningCoeffsDL, sigma2: f64, budget: f64, split: &CoherenceSplit, opts: &SolverOptions) -> Result<PowerSolution> {
    maxmin(&coeffs.gains(sigma2), PowerLimit::SumBudget(budget), split.prelog_dl(), Direction::Downlink, opts)
}

/// Equal power allocation: full power per UE in the uplink, an equal share
/// of the `L·P_max^DL` budget in the downlink.
pub fn epa(direction: Direction, k: usize, l: usize, cfg: &NetworkConfig) -> PowerVector {
    let p = match direction {
        Direction::Uplink => cfg.p_ul_max,
        Direction::Downlink => cfg.dl_budget(l) / k as f64,
    };
    PowerVector::new(vec![p; k], direction)
}

/// Fractional power allocation with weights `β_k^ν` on the aggregate gains.
pub fn fpa(large: &LargeScaleTable, nu: f64, direction: Direction, cfg: &NetworkConfig) -> PowerVector {
    let l = large.beta.first().map_or(0, Vec::len);
    fpa_from_aggregate(&large.aggregate_gains(), nu, direction, cfg.p_ul_max, cfg.dl_budget(l))
}

pub fn fpa_from_aggregate(beta_agg: &[f64], nu: f64, direction: Direction, p_ul_max: f64, dl_budget: f64) -> PowerVector {
    let u: Vec<f64> = beta_agg.iter().map(|b| b.powf(nu)).collect();
    let p = match direction {
        Direction::Uplink => {
            let max = u.iter().copied().fold(0.0, f64::max);
            u.iter().map(|w| p_ul_max * w / max).collect()
        }
        Direction::Downlink => {
            let sum: f64 = u.iter().sum();
            u.iter().map(|w| dl_budget * w / sum).collect()
        }
    };
    PowerVector::new(p, direction)
}

/// Exhaustive grid search for small K, used as an optimality oracle.
///
/// With positive noise, scaling all powers up raises every SINR, so only the
/// outer boundary of the feasible set is enumerated: the box faces where one
/// UE transmits at the cap, or the simplex face where the budget is used up.
/// Each face is sampled at `grid_n` steps per coordinate.
pub fn brute_force_maxmin(
    gains: &LinkGains,
    limit: PowerLimit,
    prelog: f64,
    direction: Direction,
    grid_n: usize,
) -> Result<PowerSolution> {
    validate_gains(gains)?;
    let k = gains.k();
    if k > 3 {
        return Err(Error::InvalidArgument(format!("brute force supports K ≤ 3, got {k}")));
    }
    if grid_n == 0 {
        return Err(Error::InvalidArgument("grid_n must be positive".into()));
    }
    let cap = limit.value();
    let step = cap / grid_n as f64;
    let mut best = (f64::NEG_INFINITY, vec![0.0; k]);
    let mut evaluated = 0usize;
    let mut consider = |p: &[f64]| {
        evaluated += 1;
        let worst = (0..k)
            .map(|a| {
                let den = gains.interference(p, a);
                if den > 0.0 { p[a] * gains.signal[a] / den } else { 0.0 }
            })
            .fold(f64::INFINITY, f64::min);
        if worst > best.0 {
            best = (worst, p.to_vec());
        }
    };

    let mut idx = vec![0usize; k];
    match limit {
        PowerLimit::PerUser(_) => {
            for face in 0..k {
                let free: Vec<usize> = (0..k).filter(|&a| a != face).collect();
                let total = (grid_n + 1).pow(free.len() as u32);
                for code in 0..total {
                    let mut c = code;
                    for &a in &free {
                        idx[a] = c % (grid_n + 1);
                        c /= grid_n + 1;
                    }
                    idx[face] = grid_n;
                    let p: Vec<f64> = idx.iter().map(|&j| j as f64 * step).collect();
                    consider(&p);
                }
            }
        }
        PowerLimit::SumBudget(_) => {
            // Compositions of grid_n into k nonnegative parts.
            let total = (grid_n + 1).pow((k - 1) as u32);
            for code in 0..total {
                let mut c = code;
                let mut used = 0;
                for slot in idx.iter_mut().take(k - 1) {
                    *slot = c % (grid_n + 1);
                    c /= grid_n + 1;
                    used += *slot;
                }
                if used > grid_n {
                    continue;
                }
                idx[k - 1] = grid_n - used;
                let p: Vec<f64> = idx.iter().map(|&j| j as f64 * step).collect();
                consider(&p);
            }
        }
    }
    let (t_star, p) = best;
    Ok(PowerSolution {
        p: PowerVector::new(p, direction),
        t_star,
        min_se: prelog * (1.0 + t_star).log2(),
        iterations: evaluated,
        converged: true,
        active_constraint: format!("grid search, {grid_n} steps per coordinate"),
    })
}
