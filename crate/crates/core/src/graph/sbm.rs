use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{CsrGraph, Dataset, Splits};
use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Planted-partition generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Weight of the class-mean direction in each feature row; the noise
    /// term gets `1 - feature_signal`.
    pub feature_signal: f64,
    pub seed: u64,
}

impl SbmParams {
    /// The two-block reference instance used throughout the tests.
    pub fn reference(feature_signal: f64, seed: u64) -> Self {
        Self {
            block_sizes: vec![200, 200],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            feature_signal,
            seed,
        }
    }
}

/// Samples a stochastic block model dataset.
///
/// Labels are block ids. Class `c` has mean feature vector `e_c` (a unit
/// basis vector, so class means are orthonormal); each row is
/// `signal · e_c + (1 - signal) · N(0, I)`. Splits are 60/20/20 within
/// each class.
pub fn generate_sbm(params: &SbmParams) -> Result<Dataset> {
    let SbmParams {
        block_sizes,
        p_in,
        p_out,
        feature_dim,
        feature_signal,
        seed,
    } = params;
    for (name, p) in [("p_in", p_in), ("p_out", p_out), ("feature_signal", feature_signal)] {
        if !(0.0..=1.0).contains(p) {
            return invalid(format!("{name} = {p} is outside [0, 1]"));
        }
    }
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return invalid("blocks must be non-empty");
    }
    let num_classes = block_sizes.len();
    if *feature_dim < num_classes {
        return invalid(format!(
            "feature_dim {feature_dim} cannot hold {num_classes} orthogonal class means"
        ));
    }

    let labels: Vec<i64> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &size)| std::iter::repeat_n(c as i64, size))
        .collect();
    let n = labels.len();

    let mut edge_rng = rng::derived(*seed, &[0]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { *p_in } else { *p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = CsrGraph::from_undirected_edges(n, &edges)?;

    let mut feat_rng = rng::derived(*seed, &[1]);
    let noise = 1.0 - feature_signal;
    let features = Tensor::from_fn(n, *feature_dim, |i, j| {
        let z: f64 = feat_rng.sample(StandardNormal);
        let mean = if j as i64 == labels[i] { 1.0 } else { 0.0 };
        feature_signal * mean + noise * z
    });

    let mut split_rng = rng::derived(*seed, &[2]);
    let mut splits = Splits::default();
    let mut start = 0;
    for &size in block_sizes {
        let mut members: Vec<usize> = (start..start + size).collect();
        members.shuffle(&mut split_rng);
        let n_train = (size as f64 * 0.6).round() as usize;
        let n_valid = (size as f64 * 0.2).round() as usize;
        splits.train.extend_from_slice(&members[..n_train]);
        splits.valid.extend_from_slice(&members[n_train..(n_train + n_valid).min(size)]);
        splits.test.extend_from_slice(&members[(n_train + n_valid).min(size)..]);
        start += size;
    }
    for s in [&mut splits.train, &mut splits.valid, &mut splits.test] {
        s.sort_unstable();
    }

    Dataset::new(graph, features, labels, num_classes, splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_probabilities_give_disjoint_cliques() {
        let ds = generate_sbm(&SbmParams {
            block_sizes: vec![2, 2],
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            feature_signal: 1.0,
            seed: 3,
        })
        .unwrap();
        let edges: Vec<_> = ds.graph.edges().collect();
        assert_eq!(edges, vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
        assert_eq!(ds.labels, vec![0, 0, 1, 1]);
        assert_eq!(ds.features.row(2), &[0.0, 1.0]);
    }

    #[test]
    fn deterministic_in_seed() {
        let p = SbmParams::reference(0.5, 11);
        assert_eq!(generate_sbm(&p).unwrap(), generate_sbm(&p).unwrap());
        let other = generate_sbm(&SbmParams { seed: 12, ..p.clone() }).unwrap();
        assert_ne!(generate_sbm(&p).unwrap().graph, other.graph);
    }

    #[test]
    fn stratified_split_sizes() {
        let ds = generate_sbm(&SbmParams::reference(0.5, 0)).unwrap();
        assert_eq!(ds.splits.train.len(), 240);
        assert_eq!(ds.splits.valid.len(), 80);
        assert_eq!(ds.splits.test.len(), 80);
        let train_c0 = ds.splits.train.iter().filter(|&&i| ds.labels[i] == 0).count();
        assert_eq!(train_c0, 120);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = SbmParams::reference(0.5, 0);
        p.p_in = 1.5;
        assert!(generate_sbm(&p).is_err());
        let mut p = SbmParams::reference(0.5, 0);
        p.block_sizes = vec![3, 0];
        assert!(generate_sbm(&p).is_err());
    }
}
