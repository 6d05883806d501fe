//! Node-classification tricks layered around the model: embedding merge,
//! label propagation with Correct & Smooth, FLAG adversarial feature
//! augmentation, and label usage.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{Adam, Tape};
use crate::error::{invalid, Error, Result};
use crate::graph::{symmetric_normalize, Dataset, NormalizedAdjacency};
use crate::io::NodeMatrix;
use crate::model::GcnResModel;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::Batch;

/// Pre-trained node embeddings plus a provenance string.
pub type EmbeddingMatrix = NodeMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMode {
    #[default]
    Concat,
    Sum,
}

/// Merges node features with embeddings: `[x | e]` or `x + e`.
pub fn embedding_merge(x: &Tensor, embeddings: &Tensor, mode: MergeMode) -> Result<Tensor> {
    if x.rows() != embeddings.rows() {
        return Err(Error::Shape {
            op: "embedding_merge",
            left: x.shape(),
            right: embeddings.shape(),
        });
    }
    match mode {
        MergeMode::Concat => x.concat_cols(embeddings),
        MergeMode::Sum => {
            x.check_same_shape(embeddings, "embedding_merge")?;
            Ok(x.zip_map(embeddings, |a, b| a + b))
        }
    }
}

/// Iterates `y(t+1) = (1 − α)·y(0) + α·Â·y(t)` for `iters` steps.
pub fn label_propagate(y: &Tensor, adj: &NormalizedAdjacency, alpha: f64, iters: usize) -> Result<Tensor> {
    if !(0.0..1.0).contains(&alpha) {
        return invalid(format!("propagation alpha {alpha} outside [0, 1)"));
    }
    if y.rows() != adj.num_nodes() {
        return Err(Error::Shape {
            op: "label_propagate",
            left: (adj.num_nodes(), adj.num_nodes()),
            right: y.shape(),
        });
    }
    let mut cur = y.clone();
    for _ in 0..iters {
        let spread = adj.apply(&cur)?;
        cur = y.zip_map(&spread, |y0, s| (1.0 - alpha) * y0 + alpha * s);
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualScale {
    Fixed(f64),
    /// Mean L1 norm of the known residuals over the mean L1 norm of the
    /// propagated residuals on the remaining nodes.
    Auto,
}

/// Which labels Correct & Smooth may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSet {
    /// Train labels only.
    V2,
    /// Train and validation labels.
    V3,
}

impl LabelSet {
    pub fn nodes(self, dataset: &Dataset) -> Vec<usize> {
        let mut nodes = dataset.splits.train.clone();
        if self == LabelSet::V3 {
            nodes.extend_from_slice(&dataset.splits.valid);
        }
        nodes.sort_unstable();
        nodes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectSmoothConfig {
    pub correct_alpha: f64,
    pub correct_iters: usize,
    pub scale: ResidualScale,
    pub smooth_alpha: f64,
    pub smooth_iters: usize,
    pub label_set: LabelSet,
}

impl Default for CorrectSmoothConfig {
    fn default() -> Self {
        Self {
            correct_alpha: 0.8,
            correct_iters: 50,
            scale: ResidualScale::Auto,
            smooth_alpha: 0.8,
            smooth_iters: 50,
            label_set: LabelSet::V2,
        }
    }
}

fn mean_row_l1(t: &Tensor, rows: &[usize]) -> f64 {
    let total: f64 = rows.iter().map(|&i| t.row(i).iter().map(|v| v.abs()).sum::<f64>()).sum();
    total / rows.len() as f64
}

/// Correct & Smooth post-processing of base class probabilities.
///
/// Correct: propagate the residual `onehot(y) − base` (zero off the label
/// set), scale it, add it to `base`. Smooth: clamp label-set rows to their
/// one-hot labels and propagate again. Rows are finally clamped to `≥ 0`
/// and renormalized.
pub fn correct_and_smooth(base: &Tensor, dataset: &Dataset, cfg: &CorrectSmoothConfig) -> Result<Tensor> {
    let adj = symmetric_normalize(&dataset.graph)?;
    correct_and_smooth_with(base, dataset, &adj, cfg)
}

/// [`correct_and_smooth`] with a precomputed operator.
pub fn correct_and_smooth_with(
    base: &Tensor,
    dataset: &Dataset,
    adj: &NormalizedAdjacency,
    cfg: &CorrectSmoothConfig,
) -> Result<Tensor> {
    if base.shape() != (dataset.num_nodes(), dataset.num_classes) {
        return Err(Error::Shape {
            op: "correct_and_smooth",
            left: (dataset.num_nodes(), dataset.num_classes),
            right: base.shape(),
        });
    }
    for i in 0..base.rows() {
        let s: f64 = base.row(i).iter().sum();
        if (s - 1.0).abs() > 1e-6 || base.row(i).iter().any(|&v| v < 0.0) {
            return invalid(format!("base prediction row {i} is not a distribution (sum {s})"));
        }
    }
    let known = cfg.label_set.nodes(dataset);
    if known.is_empty() {
        return invalid("Correct & Smooth needs a non-empty label set");
    }
    let onehot = dataset.one_hot(&known);

    let mut residual = Tensor::zeros(base.rows(), base.cols());
    for &i in &known {
        for j in 0..base.cols() {
            residual.set(i, j, onehot.get(i, j) - base.get(i, j));
        }
    }
    let spread = label_propagate(&residual, adj, cfg.correct_alpha, cfg.correct_iters)?;
    let scale = match cfg.scale {
        ResidualScale::Fixed(s) => s,
        ResidualScale::Auto => {
            let mut is_known = vec![false; base.rows()];
            known.iter().for_each(|&i| is_known[i] = true);
            let unknown: Vec<usize> = (0..base.rows()).filter(|&i| !is_known[i]).collect();
            let denom = if unknown.is_empty() { 0.0 } else { mean_row_l1(&spread, &unknown) };
            if denom > 0.0 {
                mean_row_l1(&residual, &known) / denom
            } else {
                1.0
            }
        }
    };
    let mut guess = base.clone();
    guess.add_assign_scaled(&spread, scale);
    for &i in &known {
        guess.row_mut(i).copy_from_slice(onehot.row(i));
    }
    let mut out = label_propagate(&guess, adj, cfg.smooth_alpha, cfg.smooth_iters)?;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            let u = 1.0 / row.len() as f64;
            row.iter_mut().for_each(|v| *v = u);
        }
    }
    Ok(out)
}

/// FLAG settings: `steps` ascent steps of size `step_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Perturb only the first `n` input columns (the raw features) when set.
    pub raw_columns: Option<usize>,
}

impl Default for FlagConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            step_size: 1e-3,
            raw_columns: None,
        }
    }
}

/// One FLAG optimization step.
///
/// `δ` starts uniform in `[−step_size, step_size]` (from `delta_rng`). For
/// each of the `M` ascent steps the loss on `x + δ` is back-propagated with
/// weight `1/M` into the parameter gradients, then
/// `δ ← δ + step_size · sign(∇δ loss)`. One Adam update follows. Returns the
/// mean loss over the ascent steps.
pub fn flag_train_step(
    model: &mut GcnResModel,
    batch: &Batch,
    targets: &[(usize, usize)],
    cfg: &FlagConfig,
    adam: &Adam,
    rng: &mut Rng,
    delta_rng: &mut Rng,
) -> Result<f64> {
    let (_, loss) = flag_accumulate(model, batch, targets, cfg, rng, delta_rng)?;
    adam.step(model.params_mut());
    Ok(loss)
}

/// Gradient accumulation half of [`flag_train_step`]: leaves the averaged
/// gradients in the model's parameter store and returns the final `δ` and
/// the mean loss.
pub fn flag_accumulate(
    model: &mut GcnResModel,
    batch: &Batch,
    targets: &[(usize, usize)],
    cfg: &FlagConfig,
    rng: &mut Rng,
    delta_rng: &mut Rng,
) -> Result<(Tensor, f64)> {
    if cfg.steps == 0 {
        return invalid("FLAG needs at least one ascent step");
    }
    if cfg.step_size < 0.0 {
        return invalid("FLAG step size must be non-negative");
    }
    let (n, d) = batch.features.shape();
    let width = cfg.raw_columns.unwrap_or(d).min(d);
    let step = cfg.step_size;
    let mut delta = if step > 0.0 {
        Tensor::from_fn(n, d, |_, j| {
            if j < width {
                delta_rng.random_range(-step..=step)
            } else {
                0.0
            }
        })
    } else {
        Tensor::zeros(n, d)
    };
    let weight = 1.0 / cfg.steps as f64;
    model.params_mut().zero_grad();
    let mut total = 0.0;
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let x = tape.constant(batch.features.clone());
        let dv = tape.constant(delta.clone());
        let input = tape.add(x, dv)?;
        let out = model.forward(&mut tape, input, &batch.adjacency, true, rng)?;
        let loss = tape.nll_loss(out.log_probs, targets)?;
        let scaled = tape.scale(loss, weight)?;
        let grads = tape.backward(scaled, model.params_mut())?;
        total += tape.value(scaled).get(0, 0);
        if let Some(g) = grads.get(dv) {
            for i in 0..n {
                for j in 0..width {
                    let s = g.get(i, j);
                    let sign = if s > 0.0 {
                        1.0
                    } else if s < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    delta.set(i, j, delta.get(i, j) + step * sign);
                }
            }
        }
    }
    Ok((delta, total))
}

/// Label usage settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelUsageConfig {
    /// Extra inference passes that write predicted label distributions into
    /// the label channel of nodes whose labels are hidden.
    pub recycle_rounds: usize,
}

/// Inputs of one label-usage epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelUsageRound {
    /// `[X | label channel]`, `num_nodes × (d + num_classes)`.
    pub features: Tensor,
    /// Train nodes whose labels are visible in the label channel (sorted).
    pub exposed: Vec<usize>,
    /// Train nodes whose labels are hidden and which form the loss targets
    /// (sorted).
    pub targets: Vec<usize>,
}

impl LabelUsageRound {
    /// Writes `probs` into the label channel of every node outside
    /// `exposed`.
    pub fn recycle(&mut self, dataset: &Dataset, probs: &Tensor) {
        let d = dataset.feature_dim();
        for i in 0..dataset.num_nodes() {
            if self.exposed.binary_search(&i).is_err() {
                self.features.row_mut(i)[d..].copy_from_slice(probs.row(i));
            }
        }
    }
}

/// Splits the train set 50/50 at random: one half shows its one-hot labels
/// as extra input columns, the other half (with every non-train node)
/// gets zeros there, and the hidden train half becomes the loss targets.
pub fn label_usage_prepare(dataset: &Dataset, rng: &mut Rng) -> Result<LabelUsageRound> {
    if dataset.splits.train.is_empty() {
        return invalid("label usage needs a non-empty train split");
    }
    let mut order = dataset.splits.train.clone();
    order.shuffle(rng);
    let half = order.len() / 2;
    let mut exposed = order[..half].to_vec();
    let mut targets = order[half..].to_vec();
    exposed.sort_unstable();
    targets.sort_unstable();
    let features = dataset.features.concat_cols(&dataset.one_hot(&exposed))?;
    Ok(LabelUsageRound {
        features,
        exposed,
        targets,
    })
}
