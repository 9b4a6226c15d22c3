use cellfree_core::rng;
use cellfree_core::scenario::{sample_scenario, NetworkConfig};
use cellfree_nn::graph::Graph;
use cellfree_nn::model::{
    attention, embed_tokens, encoder_forward, ffn, mha, predict, predict_features, ModelConfig, TransformerWeights,
};
use cellfree_nn::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn uniform(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::rng_from(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Straight-line dense evaluation of softmax(QKᵀ/√d)V.
fn dense_attention(q: &Tensor, k: &Tensor, v: &Tensor, d: usize) -> Vec<Vec<f64>> {
    let n = k.rows();
    (0..q.rows())
        .map(|i| {
            let s: Vec<f64> = (0..n)
                .map(|j| (0..q.cols()).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v.cols()).map(|c| (0..n).map(|j| e[j] / z * v.get(j, c)).sum()).collect()
        })
        .collect()
}

#[test]
fn attention_matches_dense_oracle() {
    let (q, k, v) = (uniform(5, 8, 1), uniform(5, 8, 2), uniform(5, 8, 3));
    let mut g = Graph::new();
    let (qi, ki, vi) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = attention(&mut g, qi, ki, vi, 8).unwrap();
    for (i, row) in dense_attention(&q, &k, &v, 8).iter().enumerate() {
        for (c, x) in row.iter().enumerate() {
            assert!((g.value(out).get(i, c) - x).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_special_cases() {
    let mut g = Graph::new();
    let v = uniform(1, 4, 4);
    let (q, k, vi) = (g.input(uniform(1, 4, 5)), g.input(uniform(1, 4, 6)), g.input(v.clone()));
    let out = attention(&mut g, q, k, vi, 4).unwrap();
    assert_eq!(g.value(out).data(), v.data());

    let tok = uniform(1, 4, 7);
    let two = g.input(Tensor::new(2, 4, [tok.data(), tok.data()].concat()).unwrap());
    let v2 = uniform(2, 3, 8);
    let vi = g.input(v2.clone());
    let out = attention(&mut g, two, two, vi, 4).unwrap();
    for i in 0..2 {
        for c in 0..3 {
            assert!((g.value(out).get(i, c) - 0.5 * (v2.get(0, c) + v2.get(1, c))).abs() < 1e-15);
        }
    }
}

#[test]
fn ffn_matches_dense_oracle_and_identity_construction() {
    let cfg = ModelConfig { d_model: 4, heads: 1, d_ffn: 8, layers: 1, ..ModelConfig::default() };
    let w = TransformerWeights::init(&cfg, 9).unwrap();
    let l = &w.params.layers[0];
    let h = uniform(3, 4, 10);
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let hi = g.input(h.clone());
    let out = ffn(&mut g, &p.layers[0], hi).unwrap();
    for i in 0..3 {
        let hid: Vec<f64> = (0..8)
            .map(|j| ((0..4).map(|c| h.get(i, c) * l.ff1.w.get(c, j)).sum::<f64>() + l.ff1.b.get(0, j)).max(0.0))
            .collect();
        for c in 0..4 {
            let x = (0..8).map(|j| hid[j] * l.ff2.w.get(j, c)).sum::<f64>() + l.ff2.b.get(0, c);
            assert!((g.value(out).get(i, c) - x).abs() < 1e-12);
        }
    }

    // W1 = [I, −I], W2 = [I; −I] gives ReLU(x) − ReLU(−x) = x.
    let mut w = w.clone();
    let eye = |s: f64| (0..4).flat_map(move |i| (0..4).map(move |j| if i == j { s } else { 0.0 }));
    let w1: Vec<f64> = (0..4).flat_map(|i| (0..8).map(move |j| if j == i { 1.0 } else if j == i + 4 { -1.0 } else { 0.0 })).collect();
    w.params.layers[0].ff1.w = Tensor::new(4, 8, w1).unwrap();
    w.params.layers[0].ff2.w = Tensor::new(8, 4, eye(1.0).chain(eye(-1.0)).collect()).unwrap();
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let hi = g.input(h.clone());
    let out = ffn(&mut g, &p.layers[0], hi).unwrap();
    assert_eq!(g.value(out).data(), h.data());

    let mut w = w.clone();
    w.params.layers[0].ff1.w = Tensor::zeros(4, 8);
    w.params.layers[0].ff2.w = Tensor::zeros(8, 4);
    w.params.layers[0].ff2.b = Tensor::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let hi = g.input(h);
    let out = ffn(&mut g, &p.layers[0], hi).unwrap();
    assert!((0..3).all(|i| g.value(out).row(i) == [1.0, 2.0, 3.0, 4.0]));
}

#[test]
fn embedding_examples() {
    let cfg = ModelConfig::default();
    let w = TransformerWeights::init(&cfg, 1).unwrap();
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let ue = g.input(uniform(10, 2, 2).map(f64::abs));
    let ap_t = uniform(16, 2, 3).map(f64::abs);
    let ap = g.input(ap_t.clone());
    let h = embed_tokens(&mut g, &p, ue, ap).unwrap();
    assert_eq!(g.value(h).shape(), [10, 32]);

    let mut rows = ap_t.to_rows();
    rows.reverse();
    let ap_rev = g.input(Tensor::from_rows(&rows).unwrap());
    let h2 = embed_tokens(&mut g, &p, ue, ap_rev).unwrap();
    for (a, b) in g.value(h).data().iter().zip(g.value(h2).data()) {
        assert!((a - b).abs() < 1e-14);
    }

    let mut zero = w.clone();
    for t in zero.params.refs_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new();
    let p = zero.bind(&mut g, false);
    let ue = g.input(uniform(3, 2, 4));
    let ap = g.input(uniform(2, 2, 5));
    let h = embed_tokens(&mut g, &p, ue, ap).unwrap();
    assert!(g.value(h).data().iter().all(|&x| x == 0.0));
}

#[test]
fn mha_special_cases() {
    // One head collapses to plain attention on full-width projections.
    let cfg = ModelConfig { d_model: 8, heads: 1, layers: 1, d_ffn: 16, ..ModelConfig::default() };
    let w = TransformerWeights::init(&cfg, 11).unwrap();
    let h = uniform(4, 8, 12);
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let hi = g.input(h.clone());
    let out = mha(&mut g, &p.layers[0], hi, &cfg).unwrap();
    let l = &w.params.layers[0];
    let proj = |lin: &cellfree_nn::model::Linear<Tensor>| {
        let mut y = h.matmul(&lin.w).unwrap();
        let cols = y.cols();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += lin.b.get(0, i % cols);
        }
        y
    };
    let att = Tensor::from_rows(&dense_attention(&proj(&l.q), &proj(&l.k), &proj(&l.v), 8)).unwrap();
    let mut expect = att.matmul(&l.o.w).unwrap();
    for r in 0..4 {
        for c in 0..8 {
            expect.data_mut()[r * 8 + c] += l.o.b.get(0, c);
        }
    }
    for (a, b) in g.value(out).data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-12);
    }

    // Single token: output is the projected value row.
    let cfg = ModelConfig::default();
    let w = TransformerWeights::init(&cfg, 13).unwrap();
    let h = uniform(1, 32, 14);
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let hi = g.input(h.clone());
    let out = mha(&mut g, &p.layers[0], hi, &cfg).unwrap();
    let l = &w.params.layers[0];
    let v = h.matmul(&l.v.w).unwrap().zip_map(&l.v.b, |a, b| a + b);
    let o = v.matmul(&l.o.w).unwrap().zip_map(&l.o.b, |a, b| a + b);
    for (a, b) in g.value(out).data().iter().zip(o.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    for k in [1, 7, 33] {
        let hi = g.input(uniform(k, 32, k as u64));
        let out = mha(&mut g, &p.layers[0], hi, &cfg).unwrap();
        assert_eq!(g.value(out).shape(), [k, 32]);
    }
}

#[test]
fn encoder_examples() {
    let cfg = ModelConfig::default();
    let w = TransformerWeights::init(&cfg, 15).unwrap();
    let h = uniform(6, 32, 16);
    let run = |train: bool, seed: u64| {
        let mut g = Graph::new();
        let p = w.bind(&mut g, false);
        let hi = g.input(h.clone());
        let out = encoder_forward(&mut g, &p, hi, &cfg, train, seed).unwrap();
        g.value(out).clone()
    };
    assert_eq!(run(false, 1), run(false, 2));
    assert_ne!(run(true, 1), run(true, 2));
    assert_eq!(run(true, 3), run(true, 3));

    let empty = ModelConfig { layers: 0, ..cfg.clone() };
    let w0 = TransformerWeights::init(&empty, 15).unwrap();
    let mut g = Graph::new();
    let p = w0.bind(&mut g, false);
    let hi = g.input(h.clone());
    let out = encoder_forward(&mut g, &p, hi, &empty, true, 1).unwrap();
    assert_eq!(g.value(out), &h);
}

#[test]
fn forward_shapes_and_constraints() {
    let net = NetworkConfig::default();
    let w = TransformerWeights::init(&ModelConfig::default(), 17).unwrap();
    for k in [1, 10, 100] {
        let s = sample_scenario(&net, k, 16, k as u64).unwrap();
        let p = predict(&w, &s, &net).unwrap();
        assert_eq!(p.matrix().len(), k);
        assert!(p.p_ul.iter().all(|x| (0.0..=100.0).contains(x)));
        assert!((p.p_dl.iter().sum::<f64>() - 3200.0).abs() <= 1e-6 * 3200.0);
        assert_eq!(p, predict(&w, &s, &net).unwrap());
    }
}

#[test]
fn weights_round_trip_and_reject_bad_files() {
    let w = TransformerWeights::init(&ModelConfig::default(), 18).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    w.save(&path).unwrap();
    let back = TransformerWeights::load(&path).unwrap();
    assert_eq!(back, w);
    let net = NetworkConfig::default();
    let s = sample_scenario(&net, 5, 9, 3).unwrap();
    assert_eq!(predict(&back, &s, &net).unwrap(), predict(&w, &s, &net).unwrap());

    let text = std::fs::read_to_string(&path).unwrap();
    let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
    assert!(TransformerWeights::from_json(&bumped).unwrap_err().to_string().contains("format_version"));
    assert!(TransformerWeights::from_json(&text[..text.len() / 2]).is_err());
    let missing = text.replacen("\"head_dl.b\"", "\"head_dl.bias\"", 1);
    assert!(TransformerWeights::from_json(&missing).is_err());
}

fn features(k: usize, l: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::rng_from(seed);
    let ap: Vec<f64> = (0..2 * l).map(|_| r.random::<f64>()).collect();
    (0..k).map(|_| [r.random::<f64>(), r.random::<f64>()].into_iter().chain(ap.iter().copied()).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ue_permutation_equivariance(k in 1usize..12, l in 1usize..10, seed in any::<u64>()) {
        let w = TransformerWeights::init(&ModelConfig::default(), seed).unwrap();
        let z = features(k, l, seed);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng::rng_from(seed ^ 1));
        let zp: Vec<Vec<f64>> = perm.iter().map(|&i| z[i].clone()).collect();
        let a = predict_features(&w, &z, 100.0, 200.0 * l as f64).unwrap();
        let b = predict_features(&w, &zp, 100.0, 200.0 * l as f64).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((b.p_ul[j] - a.p_ul[i]).abs() <= 1e-9);
            prop_assert!((b.p_dl[j] - a.p_dl[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn ap_permutation_invariance(k in 1usize..12, l in 1usize..10, seed in any::<u64>()) {
        let w = TransformerWeights::init(&ModelConfig::default(), seed).unwrap();
        let z = features(k, l, seed);
        let mut perm: Vec<usize> = (0..l).collect();
        perm.shuffle(&mut rng::rng_from(seed ^ 2));
        let zp: Vec<Vec<f64>> = z
            .iter()
            .map(|r| r[..2].iter().copied().chain(perm.iter().flat_map(|&a| [r[2 + 2 * a], r[3 + 2 * a]])).collect())
            .collect();
        let a = predict_features(&w, &z, 100.0, 200.0 * l as f64).unwrap();
        let b = predict_features(&w, &zp, 100.0, 200.0 * l as f64).unwrap();
        for i in 0..k {
            prop_assert!((a.p_ul[i] - b.p_ul[i]).abs() <= 1e-9);
            prop_assert!((a.p_dl[i] - b.p_dl[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn outputs_respect_power_limits(k in 1usize..20, l in 1usize..20, seed in any::<u64>()) {
        let w = TransformerWeights::init(&ModelConfig::default(), seed).unwrap();
        let budget = 200.0 * l as f64;
        let p = predict_features(&w, &features(k, l, seed), 100.0, budget).unwrap();
        prop_assert!(p.p_ul.iter().all(|x| (0.0..=100.0).contains(x)));
        prop_assert!(p.p_dl.iter().all(|&x| x >= 0.0));
        prop_assert!((p.p_dl.iter().sum::<f64>() - budget).abs() <= 1e-6 * budget);
    }
}
