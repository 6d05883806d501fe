//! Structural node embeddings: node2vec-style biased random walks and
//! skip-gram with negative sampling.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::autodiff::{Adam, ParamStore, Tape};
use crate::error::{invalid, Error, Result};
use crate::graph::{CsrGraph, Dataset};
use crate::io::{load_node_matrix, save_node_matrix, EMBEDDING_MAGIC};
use crate::model::glorot;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::tricks::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 1.0,
            walk_length: 40,
            walks_per_node: 10,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return invalid(format!("walk parameters must be positive (p={}, q={})", self.p, self.q));
        }
        if self.walk_length < 2 {
            return invalid("walk_length must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            window: 5,
            negatives: 5,
            epochs: 1,
            lr: 0.025,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 {
            return invalid("skip-gram dim and window must be at least 1");
        }
        if !(self.lr > 0.0) {
            return invalid("skip-gram lr must be positive");
        }
        Ok(())
    }
}

fn next_step(graph: &CsrGraph, prev: Option<usize>, cur: usize, cfg: &WalkConfig, rng: &mut Rng) -> Option<usize> {
    let nbrs = graph.neighbors(cur);
    if nbrs.is_empty() {
        return None;
    }
    let Some(prev) = prev else {
        return Some(nbrs[rng.random_range(0..nbrs.len())]);
    };
    if cfg.p == 1.0 && cfg.q == 1.0 {
        return Some(nbrs[rng.random_range(0..nbrs.len())]);
    }
    let weight = |x: usize| {
        if x == prev {
            1.0 / cfg.p
        } else if graph.has_edge(x, prev) {
            1.0
        } else {
            1.0 / cfg.q
        }
    };
    let total: f64 = nbrs.iter().map(|&x| weight(x)).sum();
    let mut r = rng.random::<f64>() * total;
    for &x in nbrs {
        r -= weight(x);
        if r < 0.0 {
            return Some(x);
        }
    }
    nbrs.last().copied()
}

/// `walks_per_node` second-order walks from every node, grouped by start
/// node. Each start node draws from its own derived stream, so the result
/// does not depend on thread scheduling.
pub fn random_walks(graph: &CsrGraph, cfg: &WalkConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    if graph.num_nodes() == 0 {
        return invalid("random walks need a non-empty graph");
    }
    let per_node: Vec<Vec<Vec<usize>>> = (0..graph.num_nodes())
        .into_par_iter()
        .map(|start| {
            let mut rng = rng::derived(cfg.seed, &[0x3a1c, start as u64]);
            (0..cfg.walks_per_node)
                .map(|_| {
                    let mut walk = vec![start];
                    let mut prev = None;
                    while walk.len() < cfg.walk_length {
                        let cur = *walk.last().unwrap();
                        match next_step(graph, prev, cur, cfg, &mut rng) {
                            Some(next) => {
                                prev = Some(cur);
                                walk.push(next);
                            }
                            None => break,
                        }
                    }
                    walk
                })
                .collect()
        })
        .collect();
    Ok(per_node.into_iter().flatten().collect())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A (center, context) pair with its fixed negative samples.
pub type PairSample = (usize, usize, Vec<usize>);

/// Skip-gram with negative sampling. Center vectors start uniform in
/// `±0.5/dim`, context vectors at zero; negatives follow the walk-corpus
/// unigram distribution raised to 0.75.
#[derive(Debug, Clone)]
pub struct SkipGram {
    pub center: Tensor,
    pub context: Tensor,
    cfg: SkipGramConfig,
    noise: WeightedIndex<f64>,
}

impl SkipGram {
    pub fn new(walks: &[Vec<usize>], cfg: &SkipGramConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if !walks.iter().any(|w| w.len() >= 2) {
            return Err(Error::Invalid("no skip-gram pairs: every walk has length < 2".into()));
        }
        let n = walks.iter().flatten().max().map_or(0, |&m| m + 1);
        let mut counts = vec![0.0f64; n];
        walks.iter().flatten().for_each(|&v| counts[v] += 1.0);
        let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75)))
            .map_err(|e| Error::Invalid(format!("unigram table: {e}")))?;
        let bound = 0.5 / cfg.dim as f64;
        let center = Tensor::from_fn(n, cfg.dim, |_, _| rng.random_range(-bound..bound));
        Ok(Self {
            center,
            context: Tensor::zeros(n, cfg.dim),
            cfg: cfg.clone(),
            noise,
        })
    }

    fn update(&mut self, c: usize, o: usize, rng: &mut Rng) {
        let dim = self.cfg.dim;
        let mut acc = vec![0.0; dim];
        let lr = self.cfg.lr;
        let mut target = o;
        let mut label = 1.0;
        for k in 0..=self.cfg.negatives {
            if k > 0 {
                target = self.noise.sample(rng);
                if target == o {
                    continue;
                }
                label = 0.0;
            }
            let u = self.center.row(c);
            let dot: f64 = u.iter().zip(self.context.row(target)).map(|(a, b)| a * b).sum();
            let g = lr * (label - sigmoid(dot));
            let u = u.to_vec();
            let v = self.context.row_mut(target);
            for j in 0..dim {
                acc[j] += g * v[j];
                v[j] += g * u[j];
            }
        }
        self.center.row_mut(c).iter_mut().zip(&acc).for_each(|(a, d)| *a += d);
    }

    /// One pass over `walks` in a freshly shuffled order.
    pub fn train_epoch(&mut self, walks: &[Vec<usize>], rng: &mut Rng) {
        let mut order: Vec<usize> = (0..walks.len()).collect();
        order.shuffle(rng);
        let w = self.cfg.window;
        for &wi in &order {
            let walk = &walks[wi];
            for (i, &c) in walk.iter().enumerate() {
                let lo = i.saturating_sub(w);
                let hi = (i + w).min(walk.len() - 1);
                for (j, &o) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if j != i {
                        self.update(c, o, rng);
                    }
                }
            }
        }
    }

    /// Draws `count` window pairs, each with `negatives` noise samples.
    pub fn sample_pairs(&self, walks: &[Vec<usize>], count: usize, rng: &mut Rng) -> Vec<PairSample> {
        let usable: Vec<&Vec<usize>> = walks.iter().filter(|w| w.len() >= 2).collect();
        (0..count)
            .map(|_| {
                let walk = usable[rng.random_range(0..usable.len())];
                let i = rng.random_range(0..walk.len());
                let lo = i.saturating_sub(self.cfg.window);
                let hi = (i + self.cfg.window).min(walk.len() - 1);
                let mut j = i;
                while j == i {
                    j = rng.random_range(lo..=hi);
                }
                let negs = (0..self.cfg.negatives).map(|_| self.noise.sample(rng)).collect();
                (walk[i], walk[j], negs)
            })
            .collect()
    }

    /// Mean negative-sampling loss
    /// `−log σ(u·v_o) − Σ log σ(−u·v_n)` over `pairs`.
    pub fn loss(&self, pairs: &[PairSample]) -> f64 {
        let dot = |c: usize, t: usize| -> f64 { self.center.row(c).iter().zip(self.context.row(t)).map(|(a, b)| a * b).sum() };
        let total: f64 = pairs
            .iter()
            .map(|(c, o, negs)| {
                -sigmoid(dot(*c, *o)).ln() - negs.iter().map(|&n| sigmoid(-dot(*c, n)).ln()).sum::<f64>()
            })
            .sum();
        total / pairs.len() as f64
    }

    pub fn into_center(self) -> Tensor {
        self.center
    }
}

/// Trains skip-gram on `walks` for `cfg.epochs` epochs and returns the
/// center vectors.
pub fn train_skipgram(walks: &[Vec<usize>], cfg: &SkipGramConfig, rng: &mut Rng) -> Result<EmbeddingMatrix> {
    let mut model = SkipGram::new(walks, cfg, rng)?;
    for _ in 0..cfg.epochs {
        model.train_epoch(walks, rng);
    }
    Ok(EmbeddingMatrix {
        values: model.into_center(),
        provenance: format!(
            "skipgram dim={} window={} negatives={} epochs={} lr={}",
            cfg.dim, cfg.window, cfg.negatives, cfg.epochs, cfg.lr
        ),
    })
}

/// Walks plus skip-gram over the dataset graph. The provenance string
/// records every setting.
pub fn pretrain_embeddings(dataset: &Dataset, walk: &WalkConfig, skipgram: &SkipGramConfig) -> Result<EmbeddingMatrix> {
    let walks = random_walks(&dataset.graph, walk)?;
    let mut rng = rng::derived(walk.seed, &[0x5e9]);
    let mut emb = train_skipgram(&walks, skipgram, &mut rng)?;
    if emb.values.rows() != dataset.num_nodes() {
        // trailing isolated nodes never appear past their own length-1 walk
        let mut full = Tensor::zeros(dataset.num_nodes(), skipgram.dim);
        for i in 0..emb.values.rows() {
            full.row_mut(i).copy_from_slice(emb.values.row(i));
        }
        emb.values = full;
    }
    emb.provenance = format!(
        "node2vec p={} q={} walk_length={} walks_per_node={} seed={}; {}; nodes={}",
        walk.p,
        walk.q,
        walk.walk_length,
        walk.walks_per_node,
        walk.seed,
        emb.provenance,
        dataset.num_nodes()
    );
    Ok(emb)
}

pub fn save_embeddings(path: impl AsRef<Path>, emb: &EmbeddingMatrix) -> Result<()> {
    save_node_matrix(path, EMBEDDING_MAGIC, emb)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    load_node_matrix(path, EMBEDDING_MAGIC)
}

/// Trains a softmax-regression probe on the train split of `dataset` using
/// `features` and returns its test accuracy.
pub fn logistic_probe(features: &Tensor, dataset: &Dataset, epochs: usize, lr: f64, seed: u64) -> Result<f64> {
    if features.rows() != dataset.num_nodes() {
        return Err(Error::Shape {
            op: "logistic_probe",
            left: (dataset.num_nodes(), features.cols()),
            right: features.shape(),
        });
    }
    let mut store = ParamStore::new();
    let mut init = rng::derived(seed, &[0x9b0e]);
    let w = store.add("probe.weight", glorot(features.cols(), dataset.num_classes, &mut init));
    let b = store.add("probe.bias", Tensor::zeros(1, dataset.num_classes));
    let adam = Adam::new(lr, 0.0);
    let targets: Vec<(usize, usize)> = dataset.splits.train.iter().map(|&i| (i, dataset.class_of(i))).collect();
    let logits = |tape: &mut Tape<'_>, store: &ParamStore| -> Result<_> {
        let x = tape.constant(features.clone());
        let wv = tape.param(store, w);
        let bv = tape.param(store, b);
        let h = tape.matmul(x, wv)?;
        tape.add_row(h, bv)
    };
    for _ in 0..epochs {
        store.zero_grad();
        let mut tape = Tape::new();
        let z = logits(&mut tape, &store)?;
        let logp = tape.log_softmax_rows(z)?;
        let loss = tape.nll_loss(logp, &targets)?;
        tape.backward(loss, &mut store)?;
        adam.step(&mut store);
    }
    let mut tape = Tape::new();
    let z = logits(&mut tape, &store)?;
    crate::training::accuracy(tape.value(z), &dataset.labels, &dataset.splits.test)
}
