//! Mini-batch training loop, evaluation, and the multi-seed protocol.
//!
//! Per epoch: build the batches, and for each batch run forward, NLL over the
//! batch's train targets, backward and one Adam step. After each epoch the
//! model is evaluated in inference mode on the full graph and the epoch with
//! the best validation metric is remembered; its test metric is the one
//! reported.

pub mod metrics;
mod sampler;

use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use metrics::{accuracy, evaluate_probs, mean_std, roc_auc, roc_auc_columns, roc_auc_fraction, Metric};
pub use sampler::{build_batches, build_train_loader, neighbor_sample, Batch, Sampler};

use crate::autodiff::{Adam, Tape};
use crate::error::{invalid, Error, Result};
use crate::graph::{symmetric_normalize, Dataset};
use crate::model::GcnResModel;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::tricks::{flag_train_step, label_usage_prepare, FlagConfig, LabelUsageConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub sampler: Sampler,
    pub early_stop_patience: Option<usize>,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            weight_decay: 0.0,
            sampler: Sampler::FullBatch,
            early_stop_patience: None,
            metric: Metric::Accuracy,
            seed: 0,
        }
    }
}

/// Tricks that change the optimization step itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTricks {
    pub flag: Option<FlagConfig>,
    pub label_usage: Option<LabelUsageConfig>,
}

/// Per-epoch history of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub train_loss: Vec<f64>,
    pub valid_metric: Vec<f64>,
    pub test_metric: Vec<f64>,
    pub best_epoch: usize,
    /// Class probabilities of every node at the best-valid epoch.
    pub best_probs: Tensor,
    /// Optimizer steps taken.
    pub steps: usize,
    pub wall_time: Duration,
}

impl RunResult {
    pub fn best_valid(&self) -> f64 {
        self.valid_metric[self.best_epoch]
    }

    pub fn best_test(&self) -> f64 {
        self.test_metric[self.best_epoch]
    }

    /// `epoch,split,metric_name,value` lines (no header).
    pub fn metrics_csv(&self, metric: Metric) -> String {
        let mut out = String::new();
        for e in 0..self.train_loss.len() {
            out += &format!("{},train,loss,{}\n", e + 1, self.train_loss[e]);
            out += &format!("{},valid,{},{}\n", e + 1, metric.name(), self.valid_metric[e]);
            out += &format!("{},test,{},{}\n", e + 1, metric.name(), self.test_metric[e]);
        }
        out
    }
}

fn at_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::Numerical { message, .. } => Error::Numerical { epoch, message },
        other => other,
    }
}

/// Dropout stream of one batch.
pub fn batch_rng(seed: u64, epoch: usize, batch: usize) -> Rng {
    rng::derived(seed, &[0xd20, epoch as u64, batch as u64])
}

/// One ordinary optimization step: forward, NLL over `targets`, backward,
/// Adam. Returns the loss.
pub fn train_step(
    model: &mut GcnResModel,
    batch: &Batch,
    targets: &[(usize, usize)],
    adam: &Adam,
    rng: &mut Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.features.clone());
    let out = model.forward(&mut tape, x, &batch.adjacency, true, rng)?;
    let loss = tape.nll_loss(out.log_probs, targets)?;
    model.params_mut().zero_grad();
    tape.backward(loss, model.params_mut())?;
    adam.step(model.params_mut());
    Ok(tape.value(loss).get(0, 0))
}

/// Inference-mode probabilities of every node with the given input
/// features.
pub fn predict(model: &mut GcnResModel, dataset: &Dataset, features: &Tensor) -> Result<Tensor> {
    let adj = symmetric_normalize(&dataset.graph)?;
    model.predict(features, &adj)
}

/// Metric of the model on one split, in inference mode on the full graph.
pub fn evaluate(model: &mut GcnResModel, dataset: &Dataset, split: &[usize], metric: Metric) -> Result<f64> {
    let probs = predict(model, dataset, &dataset.features)?;
    evaluate_probs(&probs, dataset, split, metric)
}

/// Trains `model` on `dataset`.
pub fn train(model: &mut GcnResModel, dataset: &Dataset, cfg: &TrainConfig, tricks: &TrainTricks) -> Result<RunResult> {
    if cfg.epochs == 0 {
        return invalid("epochs must be at least 1");
    }
    if cfg.lr <= 0.0 {
        return invalid("learning rate must be positive");
    }
    if let Sampler::Neighbor { fanouts, .. } = &cfg.sampler {
        if fanouts.len() != model.config().layers {
            return invalid(format!(
                "{} fanouts for a {}-layer model",
                fanouts.len(),
                model.config().layers
            ));
        }
    }
    let start = Instant::now();
    let full_adj = symmetric_normalize(&dataset.graph)?;
    let adam = Adam::new(cfg.lr, cfg.weight_decay);

    let eval_features = match &tricks.label_usage {
        Some(_) => {
            let labels = dataset.one_hot(&dataset.splits.train);
            dataset.features.concat_cols(&labels)?
        }
        None => dataset.features.clone(),
    };
    if eval_features.cols() != model.config().input_dim {
        return Err(Error::Shape {
            op: "train",
            left: (dataset.num_nodes(), model.config().input_dim),
            right: eval_features.shape(),
        });
    }

    let mut result = RunResult {
        train_loss: Vec::new(),
        valid_metric: Vec::new(),
        test_metric: Vec::new(),
        best_epoch: 0,
        best_probs: Tensor::zeros(0, 0),
        steps: 0,
        wall_time: Duration::ZERO,
    };

    for epoch in 0..cfg.epochs {
        let (features, loss_nodes) = match &tricks.label_usage {
            Some(lu) => {
                let mut round = label_usage_prepare(dataset, &mut rng::derived(cfg.seed, &[0x1abe1, epoch as u64]))?;
                for _ in 0..lu.recycle_rounds {
                    let probs = model.predict(&round.features, &full_adj)?;
                    round.recycle(dataset, &probs);
                }
                (round.features, Some(round.targets))
            }
            None => (dataset.features.clone(), None),
        };
        let batches = build_batches(dataset, &features, &cfg.sampler, cfg.seed, epoch)?;

        let mut losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let mut targets = batch.loss_targets(dataset);
            if let Some(keep) = &loss_nodes {
                targets.retain(|&(local, _)| keep.binary_search(&batch.nodes[local]).is_ok());
                if targets.is_empty() {
                    continue;
                }
            }
            let mut rng = batch_rng(cfg.seed, epoch, b);
            let loss = match &tricks.flag {
                Some(flag) => {
                    let mut delta_rng = rng::derived(cfg.seed, &[0xf1a6, epoch as u64, b as u64]);
                    flag_train_step(model, batch, &targets, flag, &adam, &mut rng, &mut delta_rng)
                }
                None => train_step(model, batch, &targets, &adam, &mut rng),
            }
            .map_err(|e| at_epoch(e, epoch + 1))?;
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    epoch: epoch + 1,
                    message: format!("training loss is {loss}"),
                });
            }
            losses.push(loss);
            result.steps += 1;
        }

        let probs = model
            .predict(&eval_features, &full_adj)
            .map_err(|e| at_epoch(e, epoch + 1))?;
        let valid = evaluate_probs(&probs, dataset, &dataset.splits.valid, cfg.metric)?;
        let test = evaluate_probs(&probs, dataset, &dataset.splits.test, cfg.metric)?;
        result
            .train_loss
            .push(losses.iter().sum::<f64>() / losses.len().max(1) as f64);
        result.valid_metric.push(valid);
        result.test_metric.push(test);
        if epoch == 0 || valid > result.valid_metric[result.best_epoch] {
            result.best_epoch = epoch;
            result.best_probs = probs;
        }
        if let Some(patience) = cfg.early_stop_patience {
            if epoch - result.best_epoch >= patience {
                break;
            }
        }
    }
    result.wall_time = start.elapsed();
    Ok(result)
}

/// Mean ± unbiased standard deviation of best-valid-epoch metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub test: Vec<f64>,
    pub valid: Vec<f64>,
    pub test_mean: f64,
    pub test_std: f64,
    pub valid_mean: f64,
    pub valid_std: f64,
}

impl SeedSummary {
    pub fn from_metrics(seeds: Vec<u64>, valid: Vec<f64>, test: Vec<f64>) -> Self {
        let (test_mean, test_std) = mean_std(&test);
        let (valid_mean, valid_std) = mean_std(&valid);
        Self {
            seeds,
            test,
            valid,
            test_mean,
            test_std,
            valid_mean,
            valid_std,
        }
    }

    /// `test: 72.62±0.37, valid: 73.10±0.20` (percent, two decimals).
    pub fn report_line(&self) -> String {
        format!(
            "test: {}, valid: {}",
            pct(self.test_mean, self.test_std),
            pct(self.valid_mean, self.valid_std)
        )
    }
}

/// `mean±std` in percent with two decimals.
pub fn pct(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

/// Runs `run(seed)` for every seed (in parallel, results kept in seed-list
/// order) and summarizes the `(valid, test)` pairs it returns.
pub fn run_seeds<F>(seeds: &[u64], run: F) -> Result<SeedSummary>
where
    F: Fn(u64) -> Result<(f64, f64)> + Sync,
{
    if seeds.is_empty() {
        return invalid("no seeds given");
    }
    let results: Vec<(f64, f64)> = seeds.par_iter().map(|&s| run(s)).collect::<Result<_>>()?;
    let (valid, test) = results.into_iter().unzip();
    Ok(SeedSummary::from_metrics(seeds.to_vec(), valid, test))
}
