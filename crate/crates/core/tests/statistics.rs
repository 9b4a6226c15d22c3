//! Monte-Carlo checks of the simulator against the distributions it is
//! supposed to sample.

use cellfree_core::channel::{self, correlation_matrix, ChannelStats, CMat, CVec, CorrelationModel};
use cellfree_core::scenario::{sample_scenario, sample_shadowing, NetworkConfig};
use cellfree_core::se_engine::{self, HardeningAccumulator, HardeningCoeffsDL, HardeningCoeffsUL};
use cellfree_core::Complex64;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn shadowing_variance_matches_configuration() {
    let cfg = NetworkConfig::default();
    let s = sample_scenario(&cfg, 50, 1, 99).unwrap();
    let seeds = 10_000;
    let mut sum_sq = vec![0.0; 50];
    for seed in 0..seeds {
        let sh = sample_shadowing(&s.ue_xy, 1, 4.0, 9.0, seed).unwrap();
        for (acc, row) in sum_sq.iter_mut().zip(&sh) {
            *acc += row[0] * row[0];
        }
    }
    for v in sum_sq {
        let var = v / seeds as f64;
        assert!((var - 4.0).abs() < 0.05 * 4.0, "variance {var}");
    }
}

#[test]
fn shadowing_covariance_converges_to_model() {
    // Three UEs at 0, 9 and 30 m: target correlations 1/2, 2^(-30/9), 2^(-21/9).
    let ue = [[10.0, 10.0], [19.0, 10.0], [40.0, 10.0]];
    let n = 20_000;
    let sh = sample_shadowing(&ue, n, 4.0, 9.0, 17).unwrap();
    for (a, b, d) in [(0usize, 1usize, 9.0f64), (0, 2, 30.0), (1, 2, 21.0)] {
        let target = 4.0 * 2f64.powf(-d / 9.0);
        let prods: Vec<f64> = (0..n).map(|l| sh[a][l] * sh[b][l]).collect();
        let (m, sd) = mean_std(&prods);
        assert!((m - target).abs() < 3.0 * sd / (n as f64).sqrt(), "pair ({a},{b}): {m} vs {target}");
    }
}

fn single_pair_stats(r: CMat, sigma2: f64) -> ChannelStats {
    let n = r.nrows();
    ChannelStats::new(vec![r], 1, 1, n, 1, 1.0, sigma2).unwrap()
}

#[test]
fn identity_covariance_draws() {
    let st = single_pair_stats(CMat::identity(3, 3), 1.0);
    let n = 10_000;
    let mut cov = CMat::zeros(3, 3);
    for seed in 0..n {
        let d = channel::draw_channels(&st, seed);
        cov += &d.h[0] * d.h[0].adjoint();
    }
    cov /= Complex64::from(n as f64);
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((cov[(i, j)] - Complex64::from(target)).norm() < 0.05, "({i},{j}) = {}", cov[(i, j)]);
        }
    }
}

#[test]
fn estimates_follow_phi_and_are_orthogonal_to_errors() {
    let r = correlation_matrix(CorrelationModel::LocalScattering { asd_deg: 20.0 }, 3, 0.5) * Complex64::from(2.0);
    let st = single_pair_stats(r, 1.5);
    let n = 10_000;
    let mut cov = CMat::zeros(3, 3);
    let mut cross = CMat::zeros(3, 3);
    for seed in 0..n {
        let d = channel::draw_channels(&st, seed);
        let est = channel::mmse_estimate(&d, &st, seed);
        cov += &est[0] * est[0].adjoint();
        let err: CVec = &d.h[0] - &est[0];
        cross += &est[0] * err.adjoint();
    }
    cov /= Complex64::from(n as f64);
    cross /= Complex64::from(n as f64);
    let phi = &st.phi[0];
    assert!((&cov - phi).norm() < 0.05 * phi.norm(), "{cov} vs {phi}");
    // Cross-covariance entries have standard error ~ sqrt(Φ·(R−Φ)/n).
    assert!(cross.norm() < 0.05 * phi.norm(), "cross {cross}");
}

#[test]
fn collective_estimate_covariance_is_block_diagonal() {
    let cfg = NetworkConfig { n_antennas: 2, ..NetworkConfig::default() };
    let s = sample_scenario(&cfg, 2, 3, 1).unwrap();
    let large = cellfree_core::scenario::LargeScaleTable::compute(&s, &cfg).unwrap();
    let r = channel::build_covariance(&large, &s, CorrelationModel::Uncorrelated, 2);
    let st = ChannelStats::new(r, 2, 3, 2, 2, 100.0, cfg.noise_power_mw()).unwrap();
    let phi_k = st.collective(&st.phi, 1);
    for a in 0..6 {
        for b in 0..6 {
            if a / 2 != b / 2 {
                assert_eq!(phi_k[(a, b)], Complex64::new(0.0, 0.0));
            }
        }
    }
    assert_eq!(phi_k.view((4, 4), (2, 2)).into_owned(), st.phi[st.idx(1, 2)]);
}

fn random_stats(seed: u64, k: usize, l: usize, n: usize) -> ChannelStats {
    let cfg = NetworkConfig { n_antennas: n, ..NetworkConfig::default() };
    let s = sample_scenario(&cfg, k, l, seed).unwrap();
    let large = cellfree_core::scenario::LargeScaleTable::compute(&s, &cfg).unwrap();
    let r = channel::build_covariance(&large, &s, CorrelationModel::LocalScattering { asd_deg: 10.0 }, n);
    ChannelStats::new(r, k, l, n, k, cfg.pilot_power_mw(), cfg.noise_power_mw()).unwrap()
}

#[test]
fn combiner_matches_dense_lu_solve() {
    let st = random_stats(5, 3, 4, 2);
    let d = channel::draw_channels(&st, 8);
    let est = channel::mmse_estimate(&d, &st, 8);
    let p = [30.0, 100.0, 5.0];
    let v = se_engine::mmse_combiner(&est, &st, &p, st.sigma2).unwrap();

    // Oracle: explicit collective matrices and a general LU solve.
    let dim = st.l * st.n;
    let mut a = CMat::identity(dim, dim) * Complex64::from(st.sigma2);
    for (k, &pk) in p.iter().enumerate() {
        let rk = st.collective(&st.r_eff, k);
        let phik = st.collective(&st.phi, k);
        a += (rk - phik + &est[k] * est[k].adjoint()) * Complex64::from(pk);
    }
    let lu = a.lu();
    for k in 0..3 {
        let oracle = lu.solve(&est[k]).unwrap();
        assert!((&v[k] - &oracle).norm() <= 1e-10 * oracle.norm(), "UE {k}");
    }
}

#[test]
fn combiner_direction_tends_to_mrc_under_heavy_noise() {
    let st = random_stats(6, 2, 2, 2);
    let d = channel::draw_channels(&st, 1);
    let est = channel::mmse_estimate(&d, &st, 1);
    let v = se_engine::mmse_combiner(&est, &st, &[100.0, 100.0], 1e6).unwrap();
    for k in 0..2 {
        let cos = v[k].dotc(&est[k]).norm() / (v[k].norm() * est[k].norm());
        assert!(cos > 1.0 - 1e-9, "cos {cos}");
    }
}

type Coeffs = (HardeningCoeffsUL, HardeningCoeffsDL);

fn flatten(c: &Coeffs) -> Vec<f64> {
    let (ul, dl) = c;
    ul.a.iter()
        .chain(ul.b.iter().flatten())
        .chain(&ul.c)
        .chain(&dl.a_bar)
        .chain(dl.b_bar.iter().flatten())
        .copied()
        .collect()
}

#[test]
fn hardening_converges_between_sample_sizes() {
    let st = random_stats(12, 2, 2, 2);
    let p = [100.0, 100.0];
    // Standard errors from independent replicates of 2000 realizations.
    let m = 2000;
    let reps: Vec<Vec<f64>> =
        (0..25).map(|r| flatten(&se_engine::mc_hardening(&st, &p, m, 1000 + r).unwrap())).collect();
    let small = flatten(&se_engine::mc_hardening(&st, &p, 10_000, 1).unwrap());
    let large = flatten(&se_engine::mc_hardening(&st, &p, 100_000, 2).unwrap());
    for i in 0..small.len() {
        let (_, sd) = mean_std(&reps.iter().map(|r| r[i]).collect::<Vec<_>>());
        let se = |n: f64| sd * (m as f64 / n).sqrt();
        let bound = 3.0 * (se(1e4).powi(2) + se(1e5).powi(2)).sqrt();
        assert!((small[i] - large[i]).abs() <= bound, "coefficient {i}: {} vs {} (bound {bound})", small[i], large[i]);
    }
}

#[test]
fn hardening_satisfies_jensen_bounds() {
    let st = random_stats(3, 3, 4, 2);
    let (ul, dl) = se_engine::mc_hardening(&st, &[100.0; 3], 200, 4).unwrap();
    for k in 0..3 {
        assert!(ul.b[k][k] >= ul.a[k] && ul.c[k] > 0.0);
        assert!(dl.b_bar[k][k] >= dl.a_bar[k]);
        assert!(ul.b[k].iter().chain(&dl.b_bar[k]).all(|&x| x >= 0.0));
    }
}

#[test]
fn relabeling_ues_permutes_moments() {
    let st = random_stats(9, 3, 2, 2);
    let d = channel::draw_channels(&st, 3);
    let est = channel::mmse_estimate(&d, &st, 3);
    let v = se_engine::mmse_combiner(&est, &st, &[100.0; 3], st.sigma2).unwrap();
    let perm = [2, 0, 1];
    let mut base = HardeningAccumulator::new(3);
    base.add(&d.h, &v).unwrap();
    let mut permuted = HardeningAccumulator::new(3);
    let hp: Vec<CVec> = perm.iter().map(|&i| d.h[i].clone()).collect();
    let vp: Vec<CVec> = perm.iter().map(|&i| v[i].clone()).collect();
    permuted.add(&hp, &vp).unwrap();
    let ((u0, d0), (u1, d1)) = (base.finish(), permuted.finish());
    for (a, &pa) in perm.iter().enumerate() {
        assert_eq!(u1.a[a], u0.a[pa]);
        assert_eq!(u1.c[a], u0.c[pa]);
        assert_eq!(d1.a_bar[a], d0.a_bar[pa]);
        for (i, &pi) in perm.iter().enumerate() {
            assert_eq!(u1.b[a][i], u0.b[pa][pi]);
            assert_eq!(d1.b_bar[a][i], d0.b_bar[pa][pi]);
        }
    }
}

#[test]
fn single_ue_mrc_matches_closed_form() {
    // Near-perfect CSI (huge pilot power) and filters at p = 0 ⇒ v = ĥ/σ²,
    // a deterministic scaling of MRC. With h ~ CN(0, βI_N):
    // SINR = p N β / (p β + σ²).
    let (n, beta, sigma2, p) = (4usize, 2.0, 1.0, 1.5);
    let r = CMat::identity(n, n) * Complex64::from(beta);
    let st = ChannelStats::new(vec![r], 1, 1, n, 1, 1e12, sigma2).unwrap();
    let closed = (1.0 + p * n as f64 * beta / (p * beta + sigma2)).log2();
    let se_of = |c: &Coeffs| se_engine::se_from_sinr(&se_engine::sinr_ul(&[p], &c.0, sigma2).unwrap(), 1.0)[0];
    let reps: Vec<f64> = (0..25).map(|r| se_of(&se_engine::mc_hardening(&st, &[0.0], 2000, 50 + r).unwrap())).collect();
    let (_, sd) = mean_std(&reps);
    let n_mc = 20_000;
    let est = se_of(&se_engine::mc_hardening(&st, &[0.0], n_mc, 7).unwrap());
    let se = sd * (2000.0 / n_mc as f64).sqrt();
    assert!((est - closed).abs() <= 3.0 * se, "MC {est} vs closed form {closed} (se {se})");
}
