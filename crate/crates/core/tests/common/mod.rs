#![allow(dead_code)]

pub mod gradcases;

use gcnkit::autodiff::{ParamId, ParamStore, Tape, Var};
use gcnkit::graph::{CsrGraph, Dataset, NormalizedAdjacency};
use gcnkit::model::GcnResModel;
use gcnkit::rng::{self, Rng};
use gcnkit::tricks::{CorrectSmoothConfig, LabelSet, ResidualScale};
use gcnkit::Tensor;
use rand::Rng as _;

pub const H: f64 = 1e-6;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Entries in `±[0.1, 1]`, away from the Relu kink.
pub fn away_from_zero(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Erdős–Rényi graph without self-loops.
pub fn random_graph(n: usize, p: f64, seed: u64) -> CsrGraph {
    let mut r = rng::seeded(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    CsrGraph::from_undirected_edges(n, &edges).unwrap()
}

/// Hand-picked and random graphs of at most 50 nodes.
pub fn fixture_graphs() -> Vec<CsrGraph> {
    let und = |n: usize, e: &[(usize, usize)]| CsrGraph::from_undirected_edges(n, e).unwrap();
    let mut gs = vec![
        und(1, &[]),
        und(2, &[(0, 1)]),
        und(3, &[(0, 1), (1, 2), (0, 2)]),
        und(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]),
        und(6, &[(0, 1), (2, 3)]),
        und(10, &(0..10).map(|i| (i, (i + 1) % 10)).collect::<Vec<_>>()),
        und(7, &(0..7).flat_map(|i| (i + 1..7).map(move |j| (i, j))).collect::<Vec<_>>()),
    ];
    for (k, &(n, p)) in [(12, 0.3), (20, 0.15), (33, 0.1), (50, 0.08), (50, 0.02)].iter().enumerate() {
        gs.push(random_graph(n, p, 100 + k as u64));
    }
    gs
}

/// Ring of 20 nodes with chords to the nodes 2 and 5 steps away:
/// connected, 6-regular, not bipartite.
pub fn circulant20() -> CsrGraph {
    let mut edges = Vec::new();
    for i in 0..20 {
        for off in [1, 2, 5] {
            edges.push((i, (i + off) % 20));
        }
    }
    CsrGraph::from_undirected_edges(20, &edges).unwrap()
}

pub fn dense_adjacency(g: &CsrGraph) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (u, v) in g.edges() {
        a[u][v] = 1.0;
    }
    a
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
pub fn dense_normalize(g: &CsrGraph) -> Vec<Vec<f64>> {
    let mut a = dense_adjacency(g);
    let n = a.len();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (d[i] * d[j]).sqrt()).collect())
        .collect()
}

pub fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_diff(a: &[Vec<f64>], t: &Tensor) -> f64 {
    assert_eq!((a.len(), a.first().map_or(t.cols(), Vec::len)), t.shape());
    let mut m: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m = m.max((v - t.get(i, j)).abs());
        }
    }
    m
}

pub fn dense_propagate(y: &[Vec<f64>], a: &[Vec<f64>], alpha: f64, iters: usize) -> Vec<Vec<f64>> {
    let mut cur = y.to_vec();
    for _ in 0..iters {
        let ay = dense_mul(a, &cur);
        cur = y
            .iter()
            .zip(&ay)
            .map(|(r0, r1)| r0.iter().zip(r1).map(|(a0, a1)| (1.0 - alpha) * a0 + alpha * a1).collect())
            .collect();
    }
    cur
}

/// Straight-line Correct & Smooth over dense matrices.
pub fn dense_correct_and_smooth(base: &[Vec<f64>], ds: &Dataset, cfg: &CorrectSmoothConfig) -> Vec<Vec<f64>> {
    let a = dense_normalize(&ds.graph);
    let n = base.len();
    let c = ds.num_classes;
    let mut known: Vec<usize> = ds.splits.train.clone();
    if cfg.label_set == LabelSet::V3 {
        known.extend(&ds.splits.valid);
    }
    let is_known: Vec<bool> = (0..n).map(|i| known.contains(&i)).collect();
    let onehot = |i: usize| -> Vec<f64> { (0..c).map(|k| if ds.labels[i] as usize == k { 1.0 } else { 0.0 }).collect() };

    let resid: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if is_known[i] {
                onehot(i).iter().zip(&base[i]).map(|(y, p)| y - p).collect()
            } else {
                vec![0.0; c]
            }
        })
        .collect();
    let spread = dense_propagate(&resid, &a, cfg.correct_alpha, cfg.correct_iters);
    let l1 = |r: &Vec<f64>| r.iter().map(|v| v.abs()).sum::<f64>();
    let s = match cfg.scale {
        ResidualScale::Fixed(s) => s,
        ResidualScale::Auto => {
            let kn: Vec<f64> = (0..n).filter(|&i| is_known[i]).map(|i| l1(&resid[i])).collect();
            let un: Vec<f64> = (0..n).filter(|&i| !is_known[i]).map(|i| l1(&spread[i])).collect();
            let num = kn.iter().sum::<f64>() / kn.len() as f64;
            let den = if un.is_empty() { 0.0 } else { un.iter().sum::<f64>() / un.len() as f64 };
            if den > 0.0 {
                num / den
            } else {
                1.0
            }
        }
    };
    let guess: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if is_known[i] {
                onehot(i)
            } else {
                base[i].iter().zip(&spread[i]).map(|(b, e)| b + s * e).collect()
            }
        })
        .collect();
    let out = dense_propagate(&guess, &a, cfg.smooth_alpha, cfg.smooth_iters);
    out.into_iter()
        .map(|row| {
            let row: Vec<f64> = row.into_iter().map(|v| v.max(0.0)).collect();
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / c as f64; c]
            }
        })
        .collect()
}

/// Worst relative error between analytic and central-difference gradients
/// of `Σ (f ⊙ R)` with respect to every entry of every parameter in
/// `store`. Entries whose absolute error is at most [`ABS_FLOOR`] count as
/// exact.
pub fn gradcheck<'a, F>(store: &mut ParamStore, seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<'a>, &ParamStore) -> Var,
{
    let loss = |store: &ParamStore| -> (Tape<'a>, Var) {
        let mut tape = Tape::new();
        let out = f(&mut tape, store);
        let (r, c) = tape.shape(out);
        let weights = uniform(r, c, -1.0, 1.0, &mut rng::derived(seed, &[0x9c]));
        let w = tape.constant(weights);
        let prod = tape.elementwise_mul(out, w).unwrap();
        let total = tape.sum(prod).unwrap();
        (tape, total)
    };
    store.zero_grad();
    let (tape, total) = loss(store);
    tape.backward(total, store).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = store.get(id).grad.clone();
        for k in 0..analytic.data().len() {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + H;
            let (t, v) = loss(store);
            let plus = t.value(v).get(0, 0);
            store.get_mut(id).value.data_mut()[k] = orig - H;
            let (t, v) = loss(store);
            let minus = t.value(v).get(0, 0);
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.data()[k];
            let err = (a - numeric).abs();
            if err > ABS_FLOOR {
                worst = worst.max(err / a.abs().max(numeric.abs()));
            }
        }
    }
    worst
}

/// [`gradcheck`] for a whole model: NLL over `targets` after a
/// training-mode forward pass whose dropout stream restarts from `seed`.
pub fn model_gradcheck(
    model: &mut GcnResModel,
    x: &Tensor,
    adj: &NormalizedAdjacency,
    targets: &[(usize, usize)],
    seed: u64,
) -> f64 {
    fn run<'g>(
        model: &mut GcnResModel,
        x: &Tensor,
        adj: &'g NormalizedAdjacency,
        targets: &[(usize, usize)],
        seed: u64,
        backward: bool,
    ) -> f64 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = model.forward(&mut tape, xv, adj, true, &mut rng::seeded(seed)).unwrap();
        let l = tape.nll_loss(out.log_probs, targets).unwrap();
        if backward {
            tape.backward(l, model.params_mut()).unwrap();
        }
        tape.value(l).get(0, 0)
    }
    model.params_mut().zero_grad();
    run(model, x, adj, targets, seed, true);
    let ids: Vec<ParamId> = model.params().ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = model.params().get(id).grad.clone();
        for k in 0..analytic.len() {
            let orig = model.params().get(id).value.data()[k];
            model.params_mut().get_mut(id).value.data_mut()[k] = orig + H;
            let plus = run(model, x, adj, targets, seed, false);
            model.params_mut().get_mut(id).value.data_mut()[k] = orig - H;
            let minus = run(model, x, adj, targets, seed, false);
            model.params_mut().get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.data()[k];
            let err = (a - numeric).abs();
            if err > ABS_FLOOR {
                worst = worst.max(err / a.abs().max(numeric.abs()));
            }
        }
    }
    worst
}

/// Population variance across nodes, averaged over columns.
pub fn node_variance(t: &Tensor) -> f64 {
    let (n, d) = t.shape();
    let mut total = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| t.get(i, j)).sum::<f64>() / n as f64;
        total += (0..n).map(|i| (t.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
    }
    total / d as f64
}

/// Variance of `X(0), …, X(depth)` for a model whose input projection and
/// convolutions are identities, on [`circulant20`] with non-negative
/// features.
pub fn depth_variances(architecture_cfg: gcnkit::model::GcnResConfig) -> Vec<f64> {
    use gcnkit::model::{Aggregation, NormKind};
    let depth = architecture_cfg.layers;
    let d = 4;
    let cfg = gcnkit::model::GcnResConfig {
        input_dim: d,
        hidden_dim: d,
        num_classes: 2,
        dropout: 0.0,
        norm: NormKind::None,
        aggregation: Aggregation::LastLayer,
        ..architecture_cfg
    };
    let mut model = GcnResModel::new(cfg, 0).unwrap();
    let eye = Tensor::identity(d);
    let mut ids = vec![model.input_weight()];
    ids.extend((0..depth).map(|k| model.conv_weight(k)));
    for id in ids {
        model.params_mut().get_mut(id).value = eye.clone();
    }
    let adj = symmetric_normalize_owned(&circulant20());
    let x = uniform(20, d, 0.0, 1.0, &mut rng::seeded(20));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, xv, &adj, false, &mut rng::seeded(0)).unwrap();
    out.states.iter().map(|&s| node_variance(tape.value(s))).collect()
}

fn symmetric_normalize_owned(g: &CsrGraph) -> NormalizedAdjacency {
    gcnkit::graph::symmetric_normalize(g).unwrap()
}

/// Max abs difference between the reduced residual model
/// (K = 1, α = β = 0, no norm, no dropout, last-layer aggregation), the
/// plain one-layer GCN with the same weights, and a dense evaluation of
/// `log_softmax(relu(Â (X W_in + b_in) W_1) W_out + b_out)`.
pub fn reduction_gap(graph: &CsrGraph, input_dim: usize, seed: u64) -> f64 {
    use gcnkit::model::{Aggregation, GcnResConfig, NormKind};
    let n = graph.num_nodes();
    let reduced = GcnResConfig {
        alpha: 0.0,
        beta: 0.0,
        norm: NormKind::None,
        dropout: 0.0,
        aggregation: Aggregation::LastLayer,
        hidden_dim: 8,
        ..GcnResConfig::gcn_res(input_dim, 3, 1)
    };
    let plain = GcnResConfig {
        dropout: 0.0,
        hidden_dim: 8,
        ..GcnResConfig::plain_gcn(input_dim, 3, 1)
    };
    let mut res_model = GcnResModel::new(reduced, seed).unwrap();
    let mut plain_model = GcnResModel::new(plain, seed ^ 0xffff).unwrap();
    // random biases so the bias path is exercised
    let mut r = rng::derived(seed, &[0xb1a5]);
    let ids: Vec<ParamId> = res_model.params().ids().collect();
    for id in ids {
        let param = res_model.params_mut().get_mut(id);
        if param.name.ends_with(".bias") {
            let (rows, cols) = param.value.shape();
            param.value = uniform(rows, cols, -0.5, 0.5, &mut r);
        }
    }
    plain_model.load_records(&res_model.to_records()).unwrap();

    let adj = symmetric_normalize_owned(graph);
    let x = uniform(n, input_dim, -1.0, 1.0, &mut r);
    let run = |m: &mut GcnResModel| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = m.forward(&mut tape, xv, &adj, true, &mut rng::seeded(0)).unwrap();
        tape.value(out.log_probs).clone()
    };
    let a = run(&mut res_model);
    let b = run(&mut plain_model);

    let p = |name: &str| -> Vec<Vec<f64>> {
        let rec = res_model.to_records();
        to_rows(&rec.iter().find(|(k, _)| k == name).unwrap().1)
    };
    let add_bias = |m: Vec<Vec<f64>>, b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        m.into_iter().map(|row| row.iter().zip(&b[0]).map(|(v, c)| v + c).collect()).collect()
    };
    let x0 = add_bias(dense_mul(&to_rows(&x), &p("input.weight")), &p("input.bias"));
    let h = dense_mul(&dense_normalize(graph), &dense_mul(&x0, &p("conv.0.weight")));
    let h: Vec<Vec<f64>> = h.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    let logits = add_bias(dense_mul(&h, &p("output.weight")), &p("output.bias"));
    let dense: Vec<Vec<f64>> = logits
        .into_iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter().map(|v| v - lse).collect()
        })
        .collect();
    let ab = a.zip_map(&b, |p, q| (p - q).abs()).max_abs();
    ab.max(max_diff(&dense, &a)).max(max_diff(&dense, &b))
}

/// Pairwise definition: P(score_pos > score_neg) + ½·P(tie), exactly.
pub fn brute_force_auc(scores: &[f64], positive: &[bool]) -> num_rational::Ratio<i128> {
    let (mut doubled, mut pairs) = (0i128, 0i128);
    for (i, &p) in positive.iter().enumerate() {
        if !p {
            continue;
        }
        for (j, &q) in positive.iter().enumerate() {
            if q {
                continue;
            }
            pairs += 1;
            doubled += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    num_rational::Ratio::new(doubled, 2 * pairs)
}

/// `n` random score vectors with ties and both classes present, checked
/// against [`brute_force_auc`]. Returns the number of mismatches.
pub fn auc_mismatches(n: usize, seed: u64) -> usize {
    let mut r = rng::seeded(seed);
    let (mut checked, mut bad) = (0, 0);
    while checked < n {
        let len = r.random_range(2..40);
        let levels = r.random_range(1..12);
        let scores: Vec<f64> = (0..len).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let positive: Vec<bool> = (0..len).map(|_| r.random_bool(0.4)).collect();
        if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
            continue;
        }
        let (num, den) = gcnkit::training::roc_auc_fraction(&scores, &positive).unwrap();
        if num_rational::Ratio::new(num as i128, den as i128) != brute_force_auc(&scores, &positive) {
            bad += 1;
        }
        checked += 1;
    }
    bad
}

/// Dataset on `g` with labels `i % 3` and splits by `i % 3` (train, valid,
/// test), for label-propagation checks.
pub fn labelled(g: CsrGraph) -> Dataset {
    let n = g.num_nodes();
    let labels = (0..n).map(|i| (i % 3) as i64).collect();
    let mut splits = gcnkit::graph::Splits::default();
    for i in 0..n {
        [&mut splits.train, &mut splits.valid, &mut splits.test][i % 3].push(i);
    }
    Dataset::new(g, Tensor::zeros(n, 1), labels, 3, splits).unwrap()
}

/// Largest deviation from the dense re-implementations of
/// `symmetric_normalize`, `gcn_conv`, `label_propagate` and
/// `correct_and_smooth` (v2 and v3) on `g`.
pub fn propagation_gaps(g: &CsrGraph, seed: u64) -> [f64; 4] {
    use gcnkit::tricks::{correct_and_smooth, label_propagate};
    let n = g.num_nodes();
    let dense = dense_normalize(g);
    let adj = gcnkit::graph::symmetric_normalize(g).unwrap();
    let norm = max_diff(&dense, &adj.to_dense());

    let mut r = rng::seeded(seed);
    let x = uniform(n, 4, -1.0, 1.0, &mut r);
    let w = uniform(4, 3, -1.0, 1.0, &mut r);
    let mut store = ParamStore::new();
    let wid = store.add("w", w.clone());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = gcnkit::model::gcn_conv(&mut tape, &store, xv, &adj, wid).unwrap();
    let conv = max_diff(&dense_mul(&dense, &dense_mul(&to_rows(&x), &to_rows(&w))), tape.value(out));

    let y = uniform(n, 3, 0.0, 1.0, &mut r);
    let mut prop: f64 = 0.0;
    for (alpha, iters) in [(0.0, 5), (0.5, 10), (0.8, 50), (0.99, 7)] {
        let got = label_propagate(&y, &adj, alpha, iters).unwrap();
        prop = prop.max(max_diff(&dense_propagate(&to_rows(&y), &dense, alpha, iters), &got));
    }

    let ds = labelled(g.clone());
    let base = gcnkit::autodiff::softmax_rows(&uniform(n, 3, -2.0, 2.0, &mut r));
    let mut cs: f64 = 0.0;
    for label_set in [LabelSet::V2, LabelSet::V3] {
        let cfg = CorrectSmoothConfig {
            label_set,
            ..Default::default()
        };
        let got = correct_and_smooth(&base, &ds, &cfg).unwrap();
        cs = cs.max(max_diff(&dense_correct_and_smooth(&to_rows(&base), &ds, &cfg), &got));
    }
    [norm, conv, prop, cs]
}
