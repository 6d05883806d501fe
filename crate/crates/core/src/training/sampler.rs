//! Mini-batch construction.
//!
//! Every sampler shuffles the train split once per epoch and cuts it into
//! chunks; each chunk becomes the loss targets of one batch, so the targets
//! of an epoch partition the train split. Samplers differ in which
//! surrounding nodes they pull into the batch subgraph.

use std::collections::{BTreeSet, HashMap};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::graph::{induced_subgraph, symmetric_normalize, CsrGraph, Dataset, NormalizedAdjacency};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sampler {
    /// One batch: the whole graph.
    FullBatch,
    /// Chunks of `batch_nodes` train nodes plus their 1-hop neighbors.
    RandomSubgraph { batch_nodes: usize },
    /// Per-layer fixed-fanout neighbor sampling from `batch_size` targets.
    Neighbor { fanouts: Vec<usize>, batch_size: usize },
    /// Subgraph induced by one length-2 random walk from each of
    /// `batch_size` root nodes. No normalization coefficients are applied.
    SaintWalk { batch_size: usize },
}

/// One training unit.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Global id of each local node.
    pub nodes: Vec<usize>,
    pub adjacency: NormalizedAdjacency,
    pub features: Tensor,
    /// Local positions of the loss targets, ascending.
    pub targets: Vec<usize>,
    /// For the neighbor sampler: the `(src, dst)` global edges kept at each
    /// hop. Empty for other samplers.
    pub layer_edges: Vec<Vec<(usize, usize)>>,
}

impl Batch {
    /// `(local row, class)` pairs for the loss.
    pub fn loss_targets(&self, dataset: &Dataset) -> Vec<(usize, usize)> {
        self.targets
            .iter()
            .map(|&t| (t, dataset.class_of(self.nodes[t])))
            .collect()
    }

    pub fn target_globals(&self) -> Vec<usize> {
        self.targets.iter().map(|&t| self.nodes[t]).collect()
    }
}

/// RNG stream for batch construction in `epoch`.
fn epoch_rng(seed: u64, epoch: usize) -> Rng {
    rng::derived(seed, &[0x5a3, epoch as u64])
}

/// Builds the batches of one epoch. Deterministic in `(seed, epoch)`.
pub fn build_train_loader(dataset: &Dataset, sampler: &Sampler, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    build_batches(dataset, &dataset.features, sampler, seed, epoch)
}

/// As [`build_train_loader`], reading node features from `features`.
pub fn build_batches(
    dataset: &Dataset,
    features: &Tensor,
    sampler: &Sampler,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    let train = &dataset.splits.train;
    if train.is_empty() {
        return invalid("empty train split");
    }
    let graph = &dataset.graph;
    if let Sampler::FullBatch = sampler {
        let mut targets = train.clone();
        targets.sort_unstable();
        return Ok(vec![Batch {
            nodes: (0..graph.num_nodes()).collect(),
            adjacency: symmetric_normalize(graph)?,
            features: features.clone(),
            targets,
            layer_edges: Vec::new(),
        }]);
    }

    let chunk = match sampler {
        Sampler::RandomSubgraph { batch_nodes } => *batch_nodes,
        Sampler::Neighbor { batch_size, fanouts } => {
            if fanouts.is_empty() || fanouts.contains(&0) {
                return invalid("fanouts must be positive");
            }
            *batch_size
        }
        Sampler::SaintWalk { batch_size } => *batch_size,
        Sampler::FullBatch => unreachable!(),
    };
    if chunk == 0 {
        return invalid("batch size must be positive");
    }
    if chunk > train.len() {
        return invalid(format!(
            "batch size {chunk} exceeds the {} train nodes",
            train.len()
        ));
    }

    let mut rng = epoch_rng(seed, epoch);
    let mut order = train.clone();
    order.shuffle(&mut rng);
    order
        .chunks(chunk)
        .map(|targets| match sampler {
            Sampler::RandomSubgraph { .. } => {
                let mut set: BTreeSet<usize> = targets.iter().copied().collect();
                for &t in targets {
                    set.extend(graph.neighbors(t));
                }
                induced_batch(graph, features, set, targets, Vec::new())
            }
            Sampler::Neighbor { fanouts, .. } => neighbor_sample(graph, features, targets, fanouts, &mut rng),
            Sampler::SaintWalk { .. } => {
                let mut set: BTreeSet<usize> = targets.iter().copied().collect();
                for &root in targets {
                    let mut cur = root;
                    for _ in 0..2 {
                        let nbrs = graph.neighbors(cur);
                        if nbrs.is_empty() {
                            break;
                        }
                        cur = nbrs[rng.random_range(0..nbrs.len())];
                        set.insert(cur);
                    }
                }
                induced_batch(graph, features, set, targets, Vec::new())
            }
            Sampler::FullBatch => unreachable!(),
        })
        .collect()
}

fn induced_batch(
    graph: &CsrGraph,
    features: &Tensor,
    set: BTreeSet<usize>,
    targets: &[usize],
    layer_edges: Vec<Vec<(usize, usize)>>,
) -> Result<Batch> {
    let nodes: Vec<usize> = set.into_iter().collect();
    let (sub, mapping) = induced_subgraph(graph, &nodes)?;
    finish_batch(sub, &mapping, nodes, features, targets, layer_edges)
}

fn finish_batch(
    sub: CsrGraph,
    mapping: &HashMap<usize, usize>,
    nodes: Vec<usize>,
    features: &Tensor,
    targets: &[usize],
    layer_edges: Vec<Vec<(usize, usize)>>,
) -> Result<Batch> {
    let mut local: Vec<usize> = targets.iter().map(|t| mapping[t]).collect();
    local.sort_unstable();
    Ok(Batch {
        features: features.select_rows(&nodes),
        nodes,
        adjacency: symmetric_normalize(&sub)?,
        targets: local,
        layer_edges,
    })
}

/// GraphSAGE-style sampling: at hop `ℓ`, each frontier node keeps at most
/// `fanouts[ℓ]` of its neighbors, drawn uniformly without replacement.
/// The batch operator is the symmetric normalization of the union of the
/// sampled edges.
pub fn neighbor_sample(
    graph: &CsrGraph,
    features: &Tensor,
    targets: &[usize],
    fanouts: &[usize],
    rng: &mut Rng,
) -> Result<Batch> {
    if targets.is_empty() {
        return invalid("neighbor sampling needs at least one target");
    }
    if fanouts.contains(&0) {
        return invalid("fanouts must be positive");
    }
    let mut set: BTreeSet<usize> = targets.iter().copied().collect();
    let mut frontier: Vec<usize> = targets.to_vec();
    let mut layer_edges = Vec::with_capacity(fanouts.len());
    for &fanout in fanouts {
        let mut edges = Vec::new();
        let mut next = Vec::new();
        for &u in &frontier {
            let nbrs = graph.neighbors(u);
            let mut pick = |v: usize| {
                if u != v {
                    edges.push((u, v));
                }
                if set.insert(v) {
                    next.push(v);
                }
            };
            if nbrs.len() <= fanout {
                nbrs.iter().for_each(|&v| pick(v));
            } else {
                let mut chosen: Vec<usize> = index::sample(rng, nbrs.len(), fanout).into_vec();
                chosen.sort_unstable();
                chosen.into_iter().for_each(|k| pick(nbrs[k]));
            }
        }
        layer_edges.push(edges);
        frontier = next;
    }
    let nodes: Vec<usize> = set.into_iter().collect();
    let mapping: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &g)| (g, k)).collect();
    let local_edges: Vec<(usize, usize)> = layer_edges
        .iter()
        .flatten()
        .map(|(u, v)| (mapping[u], mapping[v]))
        .collect();
    let sub = CsrGraph::from_undirected_edges(nodes.len(), &local_edges)?;
    finish_batch(sub, &mapping, nodes, features, targets, layer_edges)
}
