use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::tensor::Tensor;

/// Evaluation metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    RocAuc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "rocauc",
        }
    }
}

/// Fraction of `nodes` whose argmax prediction equals the label.
pub fn accuracy(probs: &Tensor, labels: &[i64], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::UndefinedMetric("accuracy over an empty split".into()));
    }
    let correct = nodes
        .iter()
        .filter(|&&i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as i64 == labels[i]
        })
        .count();
    Ok(correct as f64 / nodes.len() as f64)
}

/// Exact ROC-AUC as a fraction `numerator / denominator`.
///
/// Uses the rank-sum form with midranks for ties:
/// `AUC = (Σ_pos 2·rank − P(P+1)) / (2·P·N)`, where `2·rank` is an integer
/// because a tie group occupying ranks `a..=b` gets midrank `(a + b) / 2`.
pub fn roc_auc_fraction(scores: &[f64], positive: &[bool]) -> Result<(u128, u128)> {
    if scores.len() != positive.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u128;
    let n_neg = positive.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs both positive and negative examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1
        let doubled_mid = (start + 1 + end + 1) as u128;
        let pos_in_group = order[start..=end].iter().filter(|&&i| positive[i]).count() as u128;
        doubled_rank_sum += doubled_mid * pos_in_group;
        start = end + 1;
    }
    let numerator = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok((numerator, 2 * n_pos * n_neg))
}

pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (num, den) = roc_auc_fraction(scores, positive)?;
    Ok(num as f64 / den as f64)
}

/// Mean ROC-AUC over label columns; entries of `labels` are 1, 0, or
/// negative for "missing".
pub fn roc_auc_columns(scores: &Tensor, labels: &Tensor) -> Result<f64> {
    scores.check_same_shape(labels, "roc_auc_columns")?;
    let mut total = 0.0;
    for j in 0..scores.cols() {
        let (mut s, mut y) = (Vec::new(), Vec::new());
        for i in 0..scores.rows() {
            let l = labels.get(i, j);
            if l >= 0.0 {
                s.push(scores.get(i, j));
                y.push(l > 0.5);
            }
        }
        total += roc_auc(&s, &y)?;
    }
    Ok(total / scores.cols() as f64)
}

/// Metric value of `probs` on `nodes`.
pub fn evaluate_probs(probs: &Tensor, dataset: &Dataset, nodes: &[usize], metric: Metric) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::UndefinedMetric("empty split".into()));
    }
    match metric {
        Metric::Accuracy => accuracy(probs, &dataset.labels, nodes),
        Metric::RocAuc => {
            if dataset.num_classes != 2 {
                return Err(Error::UndefinedMetric(format!(
                    "ROC-AUC needs binary labels, dataset has {} classes",
                    dataset.num_classes
                )));
            }
            let scores: Vec<f64> = nodes.iter().map(|&i| probs.get(i, 1)).collect();
            let positive: Vec<bool> = nodes.iter().map(|&i| dataset.labels[i] == 1).collect();
            roc_auc(&scores, &positive)
        }
    }
}

/// Mean and `n − 1` denominator standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
