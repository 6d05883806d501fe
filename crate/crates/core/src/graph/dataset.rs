use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::CsrGraph;
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Train/valid/test node index sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn all(&self) -> [&[usize]; 3] {
        [&self.train, &self.valid, &self.test]
    }
}

/// A node-classification dataset. A label of `-1` marks an unlabeled node.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: CsrGraph,
    pub features: Tensor,
    pub labels: Vec<i64>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(
        graph: CsrGraph,
        features: Tensor,
        labels: Vec<i64>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let ds = Self {
            graph,
            features,
            labels,
            num_classes,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n {
            return invalid(format!(
                "feature matrix has {} rows for {n} nodes",
                self.features.rows()
            ));
        }
        if self.labels.len() != n {
            return invalid(format!("{} labels for {n} nodes", self.labels.len()));
        }
        for &l in &self.labels {
            if l < -1 || l >= self.num_classes as i64 {
                return invalid(format!(
                    "label {l} outside [-1, {}) for num_classes = {}",
                    self.num_classes, self.num_classes
                ));
            }
        }
        let mut seen = HashSet::new();
        for split in self.splits.all() {
            for &i in split {
                if i >= n {
                    return Err(Error::OutOfRange { index: i, bound: n });
                }
                if !seen.insert(i) {
                    return invalid(format!("node {i} appears in more than one split"));
                }
            }
        }
        if let Some(&i) = self.splits.train.iter().find(|&&i| self.labels[i] < 0) {
            return invalid(format!("train node {i} has no label"));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Label of `node` as a class index; panics on unlabeled nodes.
    pub fn class_of(&self, node: usize) -> usize {
        usize::try_from(self.labels[node]).expect("node is unlabeled")
    }

    /// `num_nodes × num_classes` one-hot rows for `nodes`, zero elsewhere.
    pub fn one_hot(&self, nodes: &[usize]) -> Tensor {
        let mut y = Tensor::zeros(self.num_nodes(), self.num_classes);
        for &i in nodes {
            y.set(i, self.class_of(i), 1.0);
        }
        y
    }

    /// Same dataset with a different feature matrix.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(
            self.graph.clone(),
            features,
            self.labels.clone(),
            self.num_classes,
            self.splits.clone(),
        )
    }
}

fn read_index_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim().parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("{l:?}: {e}"),
            })
        })
        .collect()
}

/// Reads splits from three text files holding one node index per line.
pub fn load_split_files(train: &Path, valid: &Path, test: &Path) -> Result<Splits> {
    Ok(Splits {
        train: read_index_file(train)?,
        valid: read_index_file(valid)?,
        test: read_index_file(test)?,
    })
}

/// Reads a dense feature matrix: one whitespace-separated row of floats
/// per line.
pub fn load_feature_file(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        rows.push(row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?);
    }
    Tensor::from_rows(&rows)
}

/// Reads one integer label per line; negative values mark unlabeled nodes.
pub fn load_label_file(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim().parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("{l:?}: {e}"),
            })
        })
        .collect()
}
