//! Runs configured trick combinations over a seed list.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::checkpoint::Records;
use crate::config::{DatasetSource, ExperimentConfig, TrickSet};
use crate::embeddings::load_embeddings;
use crate::error::{Error, Result};
use crate::graph::{generate_sbm, load_edge_list, load_feature_file, load_label_file, load_split_files, Dataset};
use crate::io::load_dataset;
use crate::model::{Aggregation, Architecture, GcnResConfig, GcnResModel, NormKind};
use crate::tensor::Tensor;
use crate::training::{evaluate_probs, pct, train, RunResult, SeedSummary, TrainConfig, TrainTricks};
use crate::tricks::{correct_and_smooth, embedding_merge, CorrectSmoothConfig};

/// Builds or loads the dataset named by the config.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Sbm(p) => generate_sbm(p),
        DatasetSource::Container(p) => load_dataset(cfg.resolve(p)),
        DatasetSource::Files {
            edges,
            features,
            labels,
            train,
            valid,
            test,
        } => {
            let x = load_feature_file(&cfg.resolve(features))?;
            let y = load_label_file(&cfg.resolve(labels))?;
            let graph = load_edge_list(cfg.resolve(edges), x.rows())?;
            let splits = load_split_files(&cfg.resolve(train), &cfg.resolve(valid), &cfg.resolve(test))?;
            let num_classes = y.iter().copied().max().unwrap_or(-1).max(0) as usize + 1;
            Dataset::new(graph, x, y, num_classes, splits)
        }
    }
}

/// `cfg` moved to `arch`, keeping depth, width and dropout. The plain
/// baseline drops residuals, normalization and layer aggregation.
pub fn model_for(cfg: &GcnResConfig, arch: Architecture) -> GcnResConfig {
    if cfg.architecture == arch {
        return cfg.clone();
    }
    let base = match arch {
        Architecture::GcnRes => GcnResConfig::gcn_res(cfg.input_dim, cfg.num_classes, cfg.layers),
        Architecture::PlainGcn => GcnResConfig {
            norm: NormKind::None,
            aggregation: Aggregation::LastLayer,
            ..GcnResConfig::plain_gcn(cfg.input_dim, cfg.num_classes, cfg.layers)
        },
    };
    GcnResConfig {
        hidden_dim: cfg.hidden_dim,
        dropout: cfg.dropout,
        ..base
    }
}

/// Dataset with embeddings merged in when `row` asks for them.
pub fn row_dataset(cfg: &ExperimentConfig, dataset: &Dataset, row: &TrickSet) -> Result<Dataset> {
    if !row.embedding {
        return Ok(dataset.clone());
    }
    let path = cfg
        .tricks
        .embedding
        .as_ref()
        .ok_or_else(|| Error::Config(format!("row {row} uses embeddings but [tricks] embedding = none")))?;
    let emb = load_embeddings(cfg.resolve(path))?;
    if emb.values.rows() != dataset.num_nodes() {
        return Err(Error::Shape {
            op: "embedding file",
            left: (dataset.num_nodes(), emb.values.cols()),
            right: emb.values.shape(),
        });
    }
    dataset.with_features(embedding_merge(&dataset.features, &emb.values, cfg.tricks.merge)?)
}

/// One seed of one row.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub result: RunResult,
    /// Best-valid-epoch probabilities before post-processing.
    pub base_probs: Tensor,
    /// Probabilities the reported metrics are computed from.
    pub probs: Tensor,
    pub valid: f64,
    pub test: f64,
    pub checkpoint: Records,
}

#[derive(Debug, Clone)]
pub struct RowOutcome {
    pub row: TrickSet,
    pub input_dim: usize,
    pub runs: Vec<SeedRun>,
    pub summary: SeedSummary,
}

fn run_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    row: &TrickSet,
    model_cfg: &GcnResConfig,
    raw_columns: usize,
    seed: u64,
) -> Result<SeedRun> {
    let mut model = GcnResModel::new(model_cfg.clone(), seed)?;
    let tc = TrainConfig {
        seed,
        ..cfg.training.clone()
    };
    let tricks = TrainTricks {
        flag: row.flag.then(|| cfg.tricks.flag_config(raw_columns)),
        label_usage: row.label_usage.then(|| cfg.tricks.label_usage_config()),
    };
    let result = train(&mut model, data, &tc, &tricks)?;
    let base_probs = result.best_probs.clone();
    let probs = match row.correct_smooth {
        Some(label_set) => {
            let cs = CorrectSmoothConfig {
                label_set,
                ..cfg.tricks.cs.clone()
            };
            correct_and_smooth(&base_probs, data, &cs)?
        }
        None => base_probs.clone(),
    };
    let metric = cfg.training.metric;
    let valid = evaluate_probs(&probs, data, &data.splits.valid, metric)?;
    let test = evaluate_probs(&probs, data, &data.splits.test, metric)?;
    Ok(SeedRun {
        seed,
        checkpoint: model.to_records(),
        result,
        base_probs,
        probs,
        valid,
        test,
    })
}

/// Trains a fresh model per seed for `row` (seeds in parallel, results in
/// seed order) and summarizes the best-valid-epoch metrics.
pub fn run_row(cfg: &ExperimentConfig, dataset: &Dataset, row: &TrickSet, seeds: &[u64]) -> Result<RowOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds".into()));
    }
    let data = row_dataset(cfg, dataset, row)?;
    let mut model_cfg = model_for(&cfg.model, row.architecture);
    model_cfg.input_dim = data.feature_dim() + if row.label_usage { data.num_classes } else { 0 };
    model_cfg.num_classes = data.num_classes;
    let raw_columns = dataset.feature_dim();
    let runs: Vec<SeedRun> = seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &data, row, &model_cfg, raw_columns, s))
        .collect::<Result<_>>()?;
    let summary = SeedSummary::from_metrics(
        seeds.to_vec(),
        runs.iter().map(|r| r.valid).collect(),
        runs.iter().map(|r| r.test).collect(),
    );
    Ok(RowOutcome {
        row: row.clone(),
        input_dim: model_cfg.input_dim,
        runs,
        summary,
    })
}

/// `seed,epoch,split,metric,value` for every run of a row.
pub fn metrics_csv(outcome: &RowOutcome, cfg: &ExperimentConfig) -> String {
    let mut out = String::from("seed,epoch,split,metric,value\n");
    for run in &outcome.runs {
        for line in run.result.metrics_csv(cfg.training.metric).lines() {
            writeln!(out, "{},{line}", run.seed).unwrap();
        }
    }
    out
}

/// Markdown table with one row per trick combination; failed rows show the
/// error instead of numbers.
pub fn ablation_markdown(rows: &[(TrickSet, Result<SeedSummary>)], metric_name: &str) -> String {
    let mut out = format!("| Method | Test {metric_name} (%) | Valid {metric_name} (%) |\n|---|---|---|\n");
    for (row, res) in rows {
        match res {
            Ok(s) => writeln!(
                out,
                "| {row} | {} | {} |",
                pct(s.test_mean, s.test_std),
                pct(s.valid_mean, s.valid_std)
            ),
            Err(e) => writeln!(out, "| {row} | failed: {e} | |"),
        }
        .unwrap();
    }
    out
}

pub fn ablation_csv(rows: &[(TrickSet, Result<SeedSummary>)]) -> String {
    let mut out = String::from("method,test_mean,test_std,valid_mean,valid_std,error\n");
    for (row, res) in rows {
        match res {
            Ok(s) => writeln!(
                out,
                "{row},{},{},{},{},",
                s.test_mean, s.test_std, s.valid_mean, s.valid_std
            ),
            Err(e) => writeln!(out, "{row},,,,,\"{}\"", e.to_string().replace('"', "'")),
        }
        .unwrap();
    }
    out
}
