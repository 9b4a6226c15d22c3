//! Max-min solver against independent oracles: dense linear solves for the
//! fixed point and exhaustive grids for the optimum.

use cellfree_core::rng;
use cellfree_core::se_engine::{Direction, LinkGains};
use cellfree_core::solvers::{
    brute_force_maxmin, feasibility_fixed_point, maxmin, Feasibility, PowerLimit, SolverOptions,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

/// Random coefficients shaped like hardening outputs: cross terms below
/// the signal, diagonal above it (Jensen), moderate SNR.
fn random_gains(seed: u64, k: usize) -> LinkGains {
    let mut r = rng::rng_from(seed);
    let signal: Vec<f64> = (0..k).map(|_| r.random_range(0.2..2.0)).collect();
    let cross = (0..k)
        .map(|a| {
            (0..k)
                .map(|i| if a == i { signal[a] * r.random_range(1.0..1.3) } else { signal[a] * r.random_range(0.0..0.3) })
                .collect()
        })
        .collect();
    let noise = (0..k).map(|_| r.random_range(0.02..0.3)).collect();
    LinkGains { signal, cross, noise }
}

fn min_sinr(g: &LinkGains, p: &[f64]) -> f64 {
    g.sinr(p).unwrap().into_iter().fold(f64::INFINITY, f64::min)
}

#[test]
fn fixed_point_matches_dense_solve() {
    let opts = SolverOptions::default();
    for seed in 0..20 {
        let g = random_gains(seed, 2);
        let t = 0.5;
        // (I − tD) p = t u with D_ki = m_ki/g_k − δ_ki, u_k = n_k/g_k.
        let d = DMatrix::from_fn(2, 2, |a, i| g.cross[a][i] / g.signal[a] - if a == i { 1.0 } else { 0.0 });
        let u = DVector::from_fn(2, |a, _| g.noise[a] / g.signal[a]);
        let oracle = (DMatrix::identity(2, 2) - d * t).lu().solve(&(u * t)).unwrap();
        match feasibility_fixed_point(t, &g, &opts, None).unwrap() {
            Feasibility::Feasible(p) => {
                for a in 0..2 {
                    assert!((p[a] - oracle[a]).abs() <= 1e-8 * oracle[a].abs().max(1.0), "seed {seed}");
                }
            }
            other => panic!("seed {seed}: {other:?}"),
        }
    }
}

/// Full (not boundary-restricted) grid over the UL box for K = 2.
fn full_grid_ul(g: &LinkGains, cap: f64, n: usize) -> f64 {
    let mut best = 0.0f64;
    for i in 0..=n {
        for j in 0..=n {
            let p = [cap * i as f64 / n as f64, cap * j as f64 / n as f64];
            if i + j > 0 {
                best = best.max(min_sinr(g, &p));
            }
        }
    }
    best
}

#[test]
fn uplink_pair_matches_full_grid() {
    let g = LinkGains {
        signal: vec![1.0, 0.4],
        cross: vec![vec![1.1, 0.2], vec![0.1, 0.45]],
        noise: vec![0.05, 0.2],
    };
    let s = maxmin(&g, PowerLimit::PerUser(1.0), 0.5, Direction::Uplink, &SolverOptions::default()).unwrap();
    let grid = full_grid_ul(&g, 1.0, 1000);
    let se = |t: f64| 0.5 * (1.0 + t).log2();
    assert!(grid <= s.t_star * (1.0 + 1e-5), "{grid} vs {}", s.t_star);
    assert!((se(grid) - s.min_se).abs() <= 0.01 * s.min_se);
}

#[test]
fn downlink_triple_matches_full_simplex_grid() {
    let g = random_gains(77, 3);
    let budget = 3.0;
    let s = maxmin(&g, PowerLimit::SumBudget(budget), 0.5, Direction::Downlink, &SolverOptions::default()).unwrap();
    let n = 1000;
    let mut best = 0.0f64;
    for i in 0..=n {
        for j in 0..=(n - i) {
            for l in 0..=(n - i - j) {
                if l + i + j == 0 || (l + i + j < n && (l + i + j) % 50 != 0) {
                    // Interior layers are dominated by scaling; sample them sparsely.
                    continue;
                }
                let p = [i, j, l].map(|x| budget * x as f64 / n as f64);
                best = best.max(min_sinr(&g, &p));
            }
        }
    }
    let se = |t: f64| 0.5 * (1.0 + t).log2();
    assert!(best <= s.t_star * (1.0 + 1e-5), "{best} vs {}", s.t_star);
    assert!((se(best) - s.min_se).abs() <= 0.01 * s.min_se);
}

#[test]
fn brute_force_gap_shrinks_with_resolution() {
    let g = random_gains(4, 2);
    let opt = maxmin(&g, PowerLimit::PerUser(1.0), 1.0, Direction::Uplink, &SolverOptions::default()).unwrap();
    let mut last_gap = f64::INFINITY;
    for n in [10, 100, 1000, 10_000] {
        let bf = brute_force_maxmin(&g, PowerLimit::PerUser(1.0), 1.0, Direction::Uplink, n).unwrap();
        let gap = opt.t_star - bf.t_star;
        assert!(gap >= -1e-5 * opt.t_star, "grid beat the optimum at n = {n}");
        assert!(gap <= last_gap + 1e-12);
        last_gap = gap;
    }
    assert!(last_gap < 1e-3 * opt.t_star);
}

fn gains_strategy() -> impl Strategy<Value = LinkGains> {
    (1usize..=6, any::<u64>()).prop_map(|(k, seed)| random_gains(seed, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solutions_are_equalized_and_tight(g in gains_strategy(), cap in 0.1f64..10.0) {
        let opts = SolverOptions::default();
        let ul = maxmin(&g, PowerLimit::PerUser(cap), 1.0, Direction::Uplink, &opts).unwrap();
        prop_assert!(ul.converged);
        for s in g.sinr(&ul.p.p).unwrap() {
            prop_assert!((s - ul.t_star).abs() <= 1e-5 * ul.t_star);
        }
        prop_assert!(ul.p.p.iter().all(|&p| p <= cap));
        prop_assert!(ul.p.p.iter().any(|&p| p >= 0.999_999 * cap));

        let budget = cap * g.k() as f64;
        let dl = maxmin(&g, PowerLimit::SumBudget(budget), 1.0, Direction::Downlink, &opts).unwrap();
        prop_assert!(dl.converged);
        for s in g.sinr(&dl.p.p).unwrap() {
            prop_assert!((s - dl.t_star).abs() <= 1e-5 * dl.t_star);
        }
        prop_assert!((dl.p.p.iter().sum::<f64>() - budget).abs() <= 1e-9 * budget);
    }

    #[test]
    fn larger_limits_never_hurt(g in gains_strategy(), cap in 0.1f64..5.0, grow in 1.0f64..4.0) {
        let opts = SolverOptions::default();
        let a = maxmin(&g, PowerLimit::PerUser(cap), 1.0, Direction::Uplink, &opts).unwrap();
        let b = maxmin(&g, PowerLimit::PerUser(cap * grow), 1.0, Direction::Uplink, &opts).unwrap();
        prop_assert!(b.t_star >= a.t_star * (1.0 - 1e-6));
        let a = maxmin(&g, PowerLimit::SumBudget(cap), 1.0, Direction::Downlink, &opts).unwrap();
        let b = maxmin(&g, PowerLimit::SumBudget(cap * grow), 1.0, Direction::Downlink, &opts).unwrap();
        prop_assert!(b.t_star >= a.t_star * (1.0 - 1e-6));
    }

    #[test]
    fn minimal_powers_grow_with_target(g in gains_strategy(), t1 in 0.01f64..0.5, dt in 0.0f64..0.3) {
        let opts = SolverOptions::default();
        let p1 = feasibility_fixed_point(t1, &g, &opts, None).unwrap();
        let p2 = feasibility_fixed_point(t1 + dt, &g, &opts, None).unwrap();
        if let (Feasibility::Feasible(a), Feasibility::Feasible(b)) = (p1, p2) {
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*y >= *x * (1.0 - 1e-9));
            }
        }
    }

    #[test]
    fn sinr_monotone_in_powers(g in gains_strategy(), seed in any::<u64>(), who in 0usize..6, bump in 0.0f64..2.0) {
        let k = g.k();
        let who = who % k;
        let mut r = rng::rng_from(seed);
        let p: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let mut q = p.clone();
        q[who] += bump;
        let (s0, s1) = (g.sinr(&p).unwrap(), g.sinr(&q).unwrap());
        for a in 0..k {
            if a == who {
                prop_assert!(s1[a] >= s0[a] * (1.0 - 1e-12));
            } else {
                prop_assert!(s1[a] <= s0[a] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn grid_oracle_lower_bounds_bisection(seed in any::<u64>(), k in 1usize..=3) {
        let g = random_gains(seed, k);
        let opts = SolverOptions::default();
        for limit in [PowerLimit::PerUser(1.0), PowerLimit::SumBudget(k as f64)] {
            let opt = maxmin(&g, limit, 1.0, Direction::Uplink, &opts).unwrap();
            let bf = brute_force_maxmin(&g, limit, 1.0, Direction::Uplink, 60).unwrap();
            prop_assert!(bf.t_star <= opt.t_star * (1.0 + 1e-5), "{} vs {}", bf.t_star, opt.t_star);
        }
    }
}
