mod common;

use common::{brute_force_auc, dense_correct_and_smooth, dense_mul, dense_normalize, dense_propagate, fixture_graphs, max_diff, propagation_gaps, to_rows, uniform};
use gcnkit::autodiff::{softmax_rows, ParamStore, Tape};
use gcnkit::graph::{generate_sbm, symmetric_normalize, SbmParams};
use gcnkit::model::gcn_conv;
use gcnkit::rng;
use gcnkit::training::{accuracy, roc_auc, roc_auc_fraction};
use gcnkit::tricks::{correct_and_smooth, label_propagate, CorrectSmoothConfig, LabelSet, ResidualScale};
use gcnkit::Tensor;
use num_rational::Ratio;
use rand::Rng as _;

#[test]
fn normalized_adjacency_matches_dense_formula() {
    for g in fixture_graphs() {
        let adj = symmetric_normalize(&g).unwrap();
        let err = max_diff(&dense_normalize(&g), &adj.to_dense());
        assert!(err <= 1e-12, "n={} err={err:e}", g.num_nodes());
    }
}

#[test]
fn edge_weights_do_not_change_normalization() {
    for g in fixture_graphs() {
        let weighted = g.clone().with_weights(vec![3.5; g.num_edges()]).unwrap();
        let a = symmetric_normalize(&g).unwrap().to_dense();
        let b = symmetric_normalize(&weighted).unwrap().to_dense();
        assert_eq!(a, b);
    }
}

#[test]
fn gcn_conv_matches_dense_product() {
    for (k, g) in fixture_graphs().into_iter().enumerate() {
        let n = g.num_nodes();
        let adj = symmetric_normalize(&g).unwrap();
        let mut r = rng::seeded(k as u64);
        let x = uniform(n, 4, -1.0, 1.0, &mut r);
        let w = uniform(4, 3, -1.0, 1.0, &mut r);
        let expected = dense_mul(&dense_normalize(&g), &dense_mul(&to_rows(&x), &to_rows(&w)));

        let mut store = ParamStore::new();
        let wid = store.add("w", w);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = gcn_conv(&mut tape, &store, xv, &adj, wid).unwrap();
        let err = max_diff(&expected, tape.value(out));
        assert!(err <= 1e-9, "n={n} err={err:e}");
    }
}

#[test]
fn label_propagation_matches_dense_iteration() {
    for (k, g) in fixture_graphs().into_iter().enumerate() {
        let n = g.num_nodes();
        let adj = symmetric_normalize(&g).unwrap();
        let y = uniform(n, 3, 0.0, 1.0, &mut rng::seeded(40 + k as u64));
        for (alpha, iters) in [(0.0, 5), (0.5, 10), (0.8, 50), (0.99, 7)] {
            let got = label_propagate(&y, &adj, alpha, iters).unwrap();
            let expected = dense_propagate(&to_rows(&y), &dense_normalize(&g), alpha, iters);
            let err = max_diff(&expected, &got);
            assert!(err <= 1e-9, "n={n} alpha={alpha} err={err:e}");
        }
    }
}

fn random_probs(n: usize, c: usize, seed: u64) -> Tensor {
    softmax_rows(&uniform(n, c, -2.0, 2.0, &mut rng::seeded(seed)))
}

#[test]
fn correct_and_smooth_matches_dense_pipeline() {
    let ds = generate_sbm(&SbmParams::reference(0.5, 3)).unwrap();
    let base = random_probs(ds.num_nodes(), ds.num_classes, 9);
    let configs = [
        CorrectSmoothConfig::default(),
        CorrectSmoothConfig {
            label_set: LabelSet::V3,
            ..Default::default()
        },
        CorrectSmoothConfig {
            scale: ResidualScale::Fixed(0.7),
            correct_alpha: 0.5,
            correct_iters: 10,
            smooth_alpha: 0.9,
            smooth_iters: 20,
            label_set: LabelSet::V2,
        },
    ];
    for cfg in configs {
        let got = correct_and_smooth(&base, &ds, &cfg).unwrap();
        let expected = dense_correct_and_smooth(&to_rows(&base), &ds, &cfg);
        let err = max_diff(&expected, &got);
        assert!(err <= 1e-9, "{cfg:?}: err={err:e}");
    }
}

#[test]
fn every_fixture_matches_the_dense_oracles() {
    for (k, g) in fixture_graphs().iter().enumerate() {
        let [norm, conv, prop, cs] = propagation_gaps(g, k as u64);
        assert!(norm <= 1e-12, "graph {k}: normalize {norm:e}");
        for (name, gap) in [("gcn_conv", conv), ("label_propagate", prop), ("correct_and_smooth", cs)] {
            assert!(gap <= 1e-9, "graph {k}: {name} {gap:e}");
        }
    }
}

#[test]
fn roc_auc_equals_pairwise_count_exactly() {
    let mut r = rng::seeded(2024);
    let mut checked = 0;
    while checked < 1000 {
        let len = r.random_range(2..40);
        let levels = r.random_range(1..12);
        let scores: Vec<f64> = (0..len).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let positive: Vec<bool> = (0..len).map(|_| r.random_bool(0.4)).collect();
        if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
            assert!(roc_auc(&scores, &positive).is_err());
            continue;
        }
        let (num, den) = roc_auc_fraction(&scores, &positive).unwrap();
        assert_eq!(Ratio::new(num as i128, den as i128), brute_force_auc(&scores, &positive));
        checked += 1;
    }
}

#[test]
fn accuracy_counts_argmax_hits() {
    let probs = Tensor::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.1, 0.9]]).unwrap();
    let labels = [0, 0, 1, 1];
    assert_eq!(accuracy(&probs, &labels, &[0, 1, 2, 3]).unwrap(), 0.5);
    assert_eq!(accuracy(&probs, &labels, &[0, 3]).unwrap(), 1.0);
}

#[test]
fn nll_gradient_is_softmax_minus_onehot() {
    let mut r = rng::seeded(5);
    for _ in 0..20 {
        let (n, c) = (r.random_range(1..8), r.random_range(2..6));
        let logits = uniform(n, c, -3.0, 3.0, &mut r);
        let mut targets = Vec::new();
        for i in 0..n {
            if r.random_bool(0.7) {
                targets.push((i, r.random_range(0..c)));
            }
        }
        if targets.is_empty() {
            continue;
        }
        let mut store = ParamStore::new();
        let id = store.add("z", logits.clone());
        let mut tape = Tape::new();
        let z = tape.param(&store, id);
        let lp = tape.log_softmax_rows(z).unwrap();
        let loss = tape.nll_loss(lp, &targets).unwrap();
        tape.backward(loss, &mut store).unwrap();

        let sm = softmax_rows(&logits);
        let mut expected = vec![vec![0.0; c]; n];
        let m = targets.len() as f64;
        for &(i, k) in &targets {
            for (j, e) in expected[i].iter_mut().enumerate() {
                *e += (sm.get(i, j) - if j == k { 1.0 } else { 0.0 }) / m;
            }
        }
        assert!(max_diff(&expected, &store.get(id).grad) <= 1e-12);
    }
}
