//! One gradient-check trial per op (and per model variant), keyed by seed.

use super::{away_from_zero, gradcheck, model_gradcheck, random_graph, uniform};
use gcnkit::autodiff::{Axis, NormAxis, ParamStore};
use gcnkit::graph::{symmetric_normalize, NormalizedAdjacency};
use gcnkit::model::{gcn_conv, layer_aggregate, AggregationWeights, GcnResConfig, GcnResModel, NormKind};
use gcnkit::rng;
use gcnkit::Tensor;
use rand::Rng as _;

pub const TRIALS: u64 = 20;
pub const OP_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;

pub type Case = (&'static str, fn(u64) -> f64);

pub const OPS: &[Case] = &[
    ("matmul", matmul),
    ("add/add_scaled", add_and_add_scaled),
    ("add_row", add_row),
    ("scale/relu/elementwise_mul", scale_relu_elementwise),
    ("scale_by_entry", scale_by_entry),
    ("spmm/gcn_conv", spmm_and_conv),
    ("dropout", dropout),
    ("normalize (batch)", |s| normalize(s, NormAxis::Batch)),
    ("normalize (layer)", |s| normalize(s, NormAxis::Layer)),
    ("normalize_fixed", normalize_fixed),
    ("softmax rows/cols/vec", softmaxes),
    ("log_softmax", log_softmax),
    ("nll_loss", nll),
    ("sum", sum),
    ("layer_aggregate (scalar)", |s| aggregate(s, false)),
    ("layer_aggregate (per-feature)", |s| aggregate(s, true)),
];

pub const MODELS: &[Case] = &[
    ("GCN_res K=3 batch norm", |s| model(base(NormKind::Batch), s)),
    ("GCN_res K=3 layer norm", |s| model(base(NormKind::Layer), s)),
    ("GCN_res K=3 pre-activated", |s| {
        model(
            GcnResConfig {
                pre_activated: true,
                ..base(NormKind::Batch)
            },
            s,
        )
    }),
    ("GCN_res K=3 per-feature, learnable α β", |s| {
        model(
            GcnResConfig {
                aggregation_weights: AggregationWeights::PerFeature,
                learnable_coefficients: true,
                ..base(NormKind::Layer)
            },
            s,
        )
    }),
    ("plain GCN K=3", |s| {
        model(
            GcnResConfig {
                hidden_dim: 5,
                ..GcnResConfig::plain_gcn(4, 3, 3)
            },
            s,
        )
    }),
];

fn dims(seed: u64) -> (usize, usize, usize) {
    let mut r = rng::derived(seed, &[0xd1]);
    (r.random_range(1..6), r.random_range(1..6), r.random_range(1..6))
}

fn matmul(s: u64) -> f64 {
    let (n, k, m) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let a = store.add("a", uniform(n, k, -1.0, 1.0, &mut r));
    let b = store.add("b", uniform(k, m, -1.0, 1.0, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let (a, b) = (t.param(st, a), t.param(st, b));
        t.matmul(a, b).unwrap()
    })
}

fn add_and_add_scaled(s: u64) -> f64 {
    let (n, m, _) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let a = store.add("a", uniform(n, m, -1.0, 1.0, &mut r));
    let b = store.add("b", uniform(n, m, -1.0, 1.0, &mut r));
    let alpha = r.random_range(-2.0..2.0);
    gradcheck(&mut store, s, |t, st| {
        let (a, b) = (t.param(st, a), t.param(st, b));
        let sum = t.add(a, b).unwrap();
        let sc = t.add_scaled(sum, b, alpha).unwrap();
        t.elementwise_mul(sc, a).unwrap()
    })
}

fn add_row(s: u64) -> f64 {
    let (n, m, _) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -1.0, 1.0, &mut r));
    let b = store.add("b", uniform(1, m, -1.0, 1.0, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let (x, b) = (t.param(st, x), t.param(st, b));
        t.add_row(x, b).unwrap()
    })
}

fn scale_relu_elementwise(s: u64) -> f64 {
    let (n, m, _) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let x = store.add("x", away_from_zero(n, m, &mut r));
    let y = store.add("y", uniform(n, m, -1.0, 1.0, &mut r));
    let alpha = r.random_range(0.5..2.0);
    gradcheck(&mut store, s, |t, st| {
        let (x, y) = (t.param(st, x), t.param(st, y));
        let sx = t.scale(x, alpha).unwrap();
        let rx = t.relu(sx).unwrap();
        t.elementwise_mul(rx, y).unwrap()
    })
}

fn scale_by_entry(s: u64) -> f64 {
    let (n, m, k) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -1.0, 1.0, &mut r));
    let scalar = store.add("w1", uniform(k, 1, -1.0, 1.0, &mut r));
    let vector = store.add("wm", uniform(k, m, -1.0, 1.0, &mut r));
    let row = r.random_range(0..k);
    gradcheck(&mut store, s, |t, st| {
        let x = t.param(st, x);
        let (a, b) = (t.param(st, scalar), t.param(st, vector));
        let xa = t.scale_by_entry(x, a, row).unwrap();
        t.scale_by_entry(xa, b, row).unwrap()
    })
}

fn spmm_and_conv(s: u64) -> f64 {
    let n = 2 + (s as usize % 9);
    let adj = symmetric_normalize(&random_graph(n, 0.4, s)).unwrap();
    let (_, d, h) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, d, -1.0, 1.0, &mut r));
    let wt = store.add("w", uniform(d, h, -1.0, 1.0, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let xv = t.param(st, x);
        let sp = t.spmm(&adj, xv).unwrap();
        gcn_conv(t, st, sp, &adj, wt).unwrap()
    })
}

fn dropout(s: u64) -> f64 {
    let (n, m, _) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -1.0, 1.0, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let xv = t.param(st, x);
        t.dropout(xv, 0.4, true, &mut rng::seeded(1000 + s)).unwrap()
    })
}

fn normalize(s: u64, axis: NormAxis) -> f64 {
    let (n, m, _) = dims(s);
    let (n, m) = (n + 1, m + 1);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -2.0, 2.0, &mut r));
    let g = store.add("g", uniform(1, m, 0.5, 1.5, &mut r));
    let b = store.add("b", uniform(1, m, -0.5, 0.5, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let (x, g, b) = (t.param(st, x), t.param(st, g), t.param(st, b));
        t.normalize(x, g, b, axis, 1e-5).unwrap().0
    })
}

fn normalize_fixed(s: u64) -> f64 {
    let (n, m, _) = dims(s);
    let mut r = rng::seeded(s);
    let mean: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..m).map(|_| r.random_range(0.1..2.0)).collect();
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -2.0, 2.0, &mut r));
    let g = store.add("g", uniform(1, m, 0.5, 1.5, &mut r));
    let b = store.add("b", uniform(1, m, -0.5, 0.5, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let (x, g, b) = (t.param(st, x), t.param(st, g), t.param(st, b));
        t.normalize_fixed(x, g, b, &mean, &var, 1e-5).unwrap()
    })
}

fn softmaxes(s: u64) -> f64 {
    let (n, m, _) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -3.0, 3.0, &mut r));
    let v = store.add("v", uniform(1, m, -3.0, 3.0, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let (x, v) = (t.param(st, x), t.param(st, v));
        let rows = t.softmax(x, Axis::Rows).unwrap();
        let cols = t.softmax(x, Axis::Cols).unwrap();
        let sv = t.softmax_vec(v).unwrap();
        let both = t.add(rows, cols).unwrap();
        t.add_row(both, sv).unwrap()
    })
}

fn logits(s: u64) -> (ParamStore, gcnkit::autodiff::ParamId, Vec<(usize, usize)>) {
    let (n, m, _) = dims(s);
    let m = m + 1;
    let mut r = rng::seeded(s);
    let targets = (0..n).map(|i| (i, r.random_range(0..m))).collect();
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -3.0, 3.0, &mut r));
    (store, x, targets)
}

fn log_softmax(s: u64) -> f64 {
    let (mut store, x, _) = logits(s);
    gradcheck(&mut store, s, |t, st| {
        let x = t.param(st, x);
        t.log_softmax_rows(x).unwrap()
    })
}

fn nll(s: u64) -> f64 {
    let (mut store, x, targets) = logits(s);
    gradcheck(&mut store, s, |t, st| {
        let x = t.param(st, x);
        let lp = t.log_softmax_rows(x).unwrap();
        t.nll_loss(lp, &targets).unwrap()
    })
}

fn sum(s: u64) -> f64 {
    let (n, m, _) = dims(s);
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(n, m, -1.0, 1.0, &mut rng::seeded(s)));
    gradcheck(&mut store, s, |t, st| {
        let x = t.param(st, x);
        let sq = t.elementwise_mul(x, x).unwrap();
        t.sum(sq).unwrap()
    })
}

fn aggregate(s: u64, per_feature: bool) -> f64 {
    let (n, m, k) = dims(s);
    let mut r = rng::seeded(s);
    let mut store = ParamStore::new();
    let states: Vec<_> = (0..k)
        .map(|i| store.add(format!("x{i}"), uniform(n, m, -1.0, 1.0, &mut r)))
        .collect();
    let cols = if per_feature { m } else { 1 };
    let wt = store.add("w", uniform(k, cols, -1.0, 1.0, &mut r));
    gradcheck(&mut store, s, |t, st| {
        let xs: Vec<_> = states.iter().map(|&p| t.param(st, p)).collect();
        let wv = t.param(st, wt);
        layer_aggregate(t, &xs, wv).unwrap()
    })
}

fn base(norm: NormKind) -> GcnResConfig {
    GcnResConfig {
        hidden_dim: 5,
        dropout: 0.2,
        norm,
        ..GcnResConfig::gcn_res(4, 3, 3)
    }
}

/// Eight-node random graph, four input features, three classes, every
/// other node a loss target.
fn model_setup(seed: u64) -> (Tensor, NormalizedAdjacency, Vec<(usize, usize)>) {
    let n = 8;
    let adj = symmetric_normalize(&random_graph(n, 0.4, seed)).unwrap();
    let mut r = rng::derived(seed, &[0xfeed]);
    let x = uniform(n, 4, -1.0, 1.0, &mut r);
    let targets = (0..n).step_by(2).map(|i| (i, r.random_range(0..3))).collect();
    (x, adj, targets)
}

fn model(cfg: GcnResConfig, s: u64) -> f64 {
    let (x, adj, targets) = model_setup(s);
    let mut model = GcnResModel::new(cfg, s).unwrap();
    // move the aggregation logits off their zero start
    let agg = model.aggregation_weights();
    let mut r = rng::derived(s, &[0xa9]);
    for v in model.params_mut().get_mut(agg).value.data_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    model_gradcheck(&mut model, &x, &adj, &targets, 77 + s)
}
