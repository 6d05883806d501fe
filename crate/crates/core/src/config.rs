//! Experiment configuration: flat `key = value` text with `[section]`
//! headers.
//!
//! ```text
//! [dataset]
//! source = sbm
//! block_sizes = 200, 200
//!
//! [model]
//! architecture = gcn_res
//! layers = 8
//!
//! [experiment]
//! seeds = 0..9
//! ablate = gcn, gcn_res, gcn_res+cs_v2
//! ```
//!
//! Unknown sections and keys are rejected. Missing keys take their
//! defaults. [`ExperimentConfig::to_text`] writes every key in a fixed
//! order, so parse and serialize round-trip.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embeddings::{SkipGramConfig, WalkConfig};
use crate::error::{Error, Result};
use crate::graph::SbmParams;
use crate::model::{Aggregation, AggregationWeights, Architecture, GcnResConfig, NormKind};
use crate::training::{Metric, Sampler, TrainConfig};
use crate::tricks::{CorrectSmoothConfig, FlagConfig, LabelSet, LabelUsageConfig, MergeMode, ResidualScale};

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Sbm(SbmParams),
    /// A `GCNT` container.
    Container(PathBuf),
    /// Plain-text edge list, features, labels and split files.
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
        train: PathBuf,
        valid: PathBuf,
        test: PathBuf,
    },
}

/// Trick settings. Sub-configurations are kept even when a trick is off so
/// that ablation rows can switch it on with the same hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TricksConfig {
    pub embedding: Option<PathBuf>,
    pub merge: MergeMode,
    pub correct_smooth: Option<LabelSet>,
    pub cs: CorrectSmoothConfig,
    pub flag: bool,
    pub flag_steps: usize,
    pub flag_step_size: f64,
    /// Perturb only the raw feature columns, not merged embeddings.
    pub flag_raw_only: bool,
    pub label_usage: bool,
    pub label_usage_recycle: usize,
}

impl Default for TricksConfig {
    fn default() -> Self {
        let flag = FlagConfig::default();
        Self {
            embedding: None,
            merge: MergeMode::Concat,
            correct_smooth: None,
            cs: CorrectSmoothConfig::default(),
            flag: false,
            flag_steps: flag.steps,
            flag_step_size: flag.step_size,
            flag_raw_only: false,
            label_usage: false,
            label_usage_recycle: 0,
        }
    }
}

impl TricksConfig {
    pub fn flag_config(&self, raw_columns: usize) -> FlagConfig {
        FlagConfig {
            steps: self.flag_steps,
            step_size: self.flag_step_size,
            raw_columns: self.flag_raw_only.then_some(raw_columns),
        }
    }

    pub fn label_usage_config(&self) -> LabelUsageConfig {
        LabelUsageConfig {
            recycle_rounds: self.label_usage_recycle,
        }
    }
}

/// One combination of architecture and tricks, written like
/// `gcn_res+emb+cs_v2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrickSet {
    pub architecture: Architecture,
    pub embedding: bool,
    pub correct_smooth: Option<LabelSet>,
    pub flag: bool,
    pub label_usage: bool,
}

impl TrickSet {
    pub fn plain(architecture: Architecture) -> Self {
        Self {
            architecture,
            embedding: false,
            correct_smooth: None,
            flag: false,
            label_usage: false,
        }
    }
}

impl fmt::Display for TrickSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.architecture {
            Architecture::PlainGcn => "gcn",
            Architecture::GcnRes => "gcn_res",
        })?;
        if self.embedding {
            f.write_str("+emb")?;
        }
        if self.flag {
            f.write_str("+flag")?;
        }
        if self.label_usage {
            f.write_str("+label_usage")?;
        }
        match self.correct_smooth {
            Some(LabelSet::V2) => f.write_str("+cs_v2"),
            Some(LabelSet::V3) => f.write_str("+cs_v3"),
            None => Ok(()),
        }
    }
}

impl FromStr for TrickSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+').map(str::trim);
        let architecture = match parts.next() {
            Some("gcn") => Architecture::PlainGcn,
            Some("gcn_res") => Architecture::GcnRes,
            other => {
                return Err(Error::Config(format!(
                    "trick row {s:?} must start with gcn or gcn_res, got {other:?}"
                )))
            }
        };
        let mut set = TrickSet::plain(architecture);
        for part in parts {
            let dup = match part {
                "emb" => std::mem::replace(&mut set.embedding, true),
                "flag" => std::mem::replace(&mut set.flag, true),
                "label_usage" => std::mem::replace(&mut set.label_usage, true),
                "cs_v2" | "cs_v3" => {
                    let ls = if part == "cs_v2" { LabelSet::V2 } else { LabelSet::V3 };
                    set.correct_smooth.replace(ls).is_some()
                }
                other => return Err(Error::Config(format!("unknown trick {other:?} in row {s:?}"))),
            };
            if dup {
                return Err(Error::Config(format!("trick {part:?} repeated in row {s:?}")));
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// `input_dim` and `num_classes` are filled in from the dataset at run
    /// time; the file does not carry them.
    pub model: GcnResConfig,
    pub training: TrainConfig,
    pub tricks: TricksConfig,
    pub walks: WalkConfig,
    pub skipgram: SkipGramConfig,
    pub seeds: Vec<u64>,
    pub ablate: Vec<TrickSet>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Sbm(SbmParams::reference(0.5, 0)),
            model: GcnResConfig::gcn_res(0, 0, 8),
            training: TrainConfig::default(),
            tricks: TricksConfig::default(),
            walks: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
            seeds: (0..10).collect(),
            ablate: Vec::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    name: &'static str,
    entries: BTreeMap<String, Entry>,
    used: HashSet<String>,
}

fn config_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

impl Section {
    fn raw(&mut self, key: &str) -> Option<(&str, usize)> {
        self.used.insert(key.to_string());
        self.entries.get(key).map(|e| (e.value.as_str(), e.line))
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let name = self.name;
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| config_err(line, format!("[{name}] {key} = {v:?}: {e}"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.parse(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_bool(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        let name = self.name;
        match self.raw(key) {
            None => Ok(()),
            Some(("true", _)) => {
                *slot = true;
                Ok(())
            }
            Some(("false", _)) => {
                *slot = false;
                Ok(())
            }
            Some((v, line)) => Err(config_err(line, format!("[{name}] {key} = {v:?}: expected true or false"))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let name = self.name;
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        if v.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|e| config_err(line, format!("[{name}] {key} item {item:?}: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)], slot: &mut T) -> Result<()> {
        let name = self.name;
        let Some((v, line)) = self.raw(key) else {
            return Ok(());
        };
        match options.iter().find(|(s, _)| *s == v) {
            Some(&(_, t)) => {
                *slot = t;
                Ok(())
            }
            None => {
                let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                Err(config_err(
                    line,
                    format!("[{name}] {key} = {v:?}: expected one of {}", names.join(", ")),
                ))
            }
        }
    }

    fn path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.raw(key).map(|(v, _)| PathBuf::from(v)))
    }

    fn require_path(&mut self, key: &str) -> Result<PathBuf> {
        let name = self.name;
        self.path(key)?
            .ok_or_else(|| Error::Config(format!("[{name}] needs `{key}`")))
    }

    fn finish(self) -> Result<()> {
        for (key, e) in &self.entries {
            if !self.used.contains(key) {
                return Err(config_err(e.line, format!("unknown key `{key}` in [{}]", self.name)));
            }
        }
        Ok(())
    }
}

const SECTIONS: [&str; 6] = ["dataset", "model", "training", "tricks", "embedding", "experiment"];

const ARCHITECTURES: [(&str, Architecture); 2] = [("gcn_res", Architecture::GcnRes), ("gcn", Architecture::PlainGcn)];
const NORMS: [(&str, NormKind); 3] = [("batch", NormKind::Batch), ("layer", NormKind::Layer), ("none", NormKind::None)];
const AGGREGATIONS: [(&str, Aggregation); 2] = [
    ("softmax_layer", Aggregation::SoftmaxLayer),
    ("last_layer", Aggregation::LastLayer),
];
const AGG_WEIGHTS: [(&str, AggregationWeights); 2] = [
    ("scalar", AggregationWeights::Scalar),
    ("per_feature", AggregationWeights::PerFeature),
];
const METRICS: [(&str, Metric); 2] = [("accuracy", Metric::Accuracy), ("rocauc", Metric::RocAuc)];
const MERGES: [(&str, MergeMode); 2] = [("concat", MergeMode::Concat), ("sum", MergeMode::Sum)];
const LABEL_SETS: [(&str, Option<LabelSet>); 3] = [
    ("none", None),
    ("v2", Some(LabelSet::V2)),
    ("v3", Some(LabelSet::V3)),
];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], value: T) -> &'static str {
    options.iter().find(|o| o.1 == value).map(|o| o.0).unwrap()
}

/// Parses `a..b` (inclusive) or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let parse = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("seed range {s:?}: {e}")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            return Err(Error::Config(format!("empty seed range {s:?}")));
        }
        return Ok((a..=b).collect());
    }
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| Error::Config(format!("seed {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("no seeds".into()));
    }
    Ok(seeds)
}

fn format_seeds(seeds: &[u64]) -> String {
    let contiguous = seeds.len() > 1 && seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous {
        format!("{}..{}", seeds[0], seeds[seeds.len() - 1])
    } else {
        join(seeds)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")
}

fn split_sections(text: &str) -> Result<BTreeMap<&'static str, Section>> {
    let mut sections: BTreeMap<&'static str, Section> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| config_err(line, format!("malformed section header {trimmed:?}")))?
                .trim();
            let name = SECTIONS
                .iter()
                .copied()
                .find(|s| *s == name)
                .ok_or_else(|| config_err(line, format!("unknown section [{name}]")))?;
            if sections.contains_key(name) {
                return Err(config_err(line, format!("section [{name}] appears twice")));
            }
            sections.insert(
                name,
                Section {
                    name,
                    entries: BTreeMap::new(),
                    used: HashSet::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| config_err(line, format!("expected `key = value`, got {trimmed:?}")))?;
        let section = current.ok_or_else(|| config_err(line, "key outside any section"))?;
        let key = key.trim().to_string();
        let entries = &mut sections.get_mut(section).unwrap().entries;
        if entries.contains_key(&key) {
            return Err(config_err(line, format!("key `{key}` repeated in [{section}]")));
        }
        entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

fn parse_dataset(s: &mut Section) -> Result<DatasetSource> {
    let mut source = "sbm".to_string();
    s.set("source", &mut source)?;
    match source.as_str() {
        "sbm" => {
            let mut p = SbmParams::reference(0.5, 0);
            if let Some(b) = s.list("block_sizes")? {
                p.block_sizes = b;
            }
            s.set("p_in", &mut p.p_in)?;
            s.set("p_out", &mut p.p_out)?;
            s.set("feature_dim", &mut p.feature_dim)?;
            s.set("feature_signal", &mut p.feature_signal)?;
            s.set("seed", &mut p.seed)?;
            Ok(DatasetSource::Sbm(p))
        }
        "container" => Ok(DatasetSource::Container(s.require_path("path")?)),
        "files" => Ok(DatasetSource::Files {
            edges: s.require_path("edges")?,
            features: s.require_path("features")?,
            labels: s.require_path("labels")?,
            train: s.require_path("train")?,
            valid: s.require_path("valid")?,
            test: s.require_path("test")?,
        }),
        other => Err(Error::Config(format!(
            "[dataset] source = {other:?}: expected sbm, container or files"
        ))),
    }
}

fn parse_model(s: &mut Section) -> Result<GcnResConfig> {
    let mut arch = Architecture::GcnRes;
    s.choice("architecture", &ARCHITECTURES, &mut arch)?;
    let mut m = match arch {
        Architecture::GcnRes => GcnResConfig::gcn_res(0, 0, 8),
        Architecture::PlainGcn => GcnResConfig::plain_gcn(0, 0, 8),
    };
    s.set("layers", &mut m.layers)?;
    s.set("hidden_dim", &mut m.hidden_dim)?;
    s.set("alpha", &mut m.alpha)?;
    s.set("beta", &mut m.beta)?;
    s.set_bool("learnable_coefficients", &mut m.learnable_coefficients)?;
    s.set("dropout", &mut m.dropout)?;
    s.choice("norm", &NORMS, &mut m.norm)?;
    s.set_bool("pre_activated", &mut m.pre_activated)?;
    s.choice("aggregation", &AGGREGATIONS, &mut m.aggregation)?;
    s.choice("aggregation_weights", &AGG_WEIGHTS, &mut m.aggregation_weights)?;
    Ok(m)
}

fn parse_training(s: &mut Section) -> Result<TrainConfig> {
    let mut t = TrainConfig::default();
    s.set("epochs", &mut t.epochs)?;
    s.set("lr", &mut t.lr)?;
    s.set("weight_decay", &mut t.weight_decay)?;
    s.choice("metric", &METRICS, &mut t.metric)?;
    if let Some(p) = s.parse::<String>("early_stop_patience")? {
        t.early_stop_patience = match p.as_str() {
            "none" => None,
            n => Some(
                n.parse()
                    .map_err(|e| Error::Config(format!("[training] early_stop_patience = {n:?}: {e}")))?,
            ),
        };
    }
    let mut sampler = "full_batch".to_string();
    s.set("sampler", &mut sampler)?;
    t.sampler = match sampler.as_str() {
        "full_batch" => Sampler::FullBatch,
        "random_subgraph" => {
            let mut batch_nodes = 256;
            s.set("batch_nodes", &mut batch_nodes)?;
            Sampler::RandomSubgraph { batch_nodes }
        }
        "neighbor" => {
            let mut batch_size = 256;
            s.set("batch_size", &mut batch_size)?;
            let fanouts = s
                .list("fanouts")?
                .ok_or_else(|| Error::Config("[training] sampler = neighbor needs `fanouts`".into()))?;
            Sampler::Neighbor { fanouts, batch_size }
        }
        "saint" => {
            let mut batch_size = 256;
            s.set("batch_size", &mut batch_size)?;
            Sampler::SaintWalk { batch_size }
        }
        other => {
            return Err(Error::Config(format!(
                "[training] sampler = {other:?}: expected full_batch, random_subgraph, neighbor or saint"
            )))
        }
    };
    Ok(t)
}

fn parse_tricks(s: &mut Section) -> Result<TricksConfig> {
    let mut t = TricksConfig::default();
    if let Some(p) = s.parse::<String>("embedding")? {
        t.embedding = (p != "none").then(|| PathBuf::from(p));
    }
    s.choice("merge", &MERGES, &mut t.merge)?;
    s.choice("correct_smooth", &LABEL_SETS, &mut t.correct_smooth)?;
    s.set("cs_correct_alpha", &mut t.cs.correct_alpha)?;
    s.set("cs_correct_iters", &mut t.cs.correct_iters)?;
    s.set("cs_smooth_alpha", &mut t.cs.smooth_alpha)?;
    s.set("cs_smooth_iters", &mut t.cs.smooth_iters)?;
    if let Some(v) = s.parse::<String>("cs_scale")? {
        t.cs.scale = match v.as_str() {
            "auto" => ResidualScale::Auto,
            x => ResidualScale::Fixed(
                x.parse()
                    .map_err(|e| Error::Config(format!("[tricks] cs_scale = {x:?}: {e}")))?,
            ),
        };
    }
    s.set_bool("flag", &mut t.flag)?;
    s.set("flag_steps", &mut t.flag_steps)?;
    s.set("flag_step_size", &mut t.flag_step_size)?;
    s.set_bool("flag_raw_only", &mut t.flag_raw_only)?;
    s.set_bool("label_usage", &mut t.label_usage)?;
    s.set("label_usage_recycle", &mut t.label_usage_recycle)?;
    Ok(t)
}

fn parse_embedding(s: &mut Section) -> Result<(WalkConfig, SkipGramConfig)> {
    let mut w = WalkConfig::default();
    let mut g = SkipGramConfig::default();
    s.set("p", &mut w.p)?;
    s.set("q", &mut w.q)?;
    s.set("walk_length", &mut w.walk_length)?;
    s.set("walks_per_node", &mut w.walks_per_node)?;
    s.set("seed", &mut w.seed)?;
    s.set("dim", &mut g.dim)?;
    s.set("window", &mut g.window)?;
    s.set("negatives", &mut g.negatives)?;
    s.set("epochs", &mut g.epochs)?;
    s.set("lr", &mut g.lr)?;
    Ok((w, g))
}

impl ExperimentConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut cfg = ExperimentConfig {
            base_dir: base_dir.into(),
            ..Default::default()
        };
        let mut take = |name: &str| sections.remove(name);
        if let Some(mut s) = take("dataset") {
            cfg.dataset = parse_dataset(&mut s)?;
            s.finish()?;
        }
        if let Some(mut s) = take("model") {
            cfg.model = parse_model(&mut s)?;
            s.finish()?;
        }
        if let Some(mut s) = take("training") {
            cfg.training = parse_training(&mut s)?;
            s.finish()?;
        }
        if let Some(mut s) = take("tricks") {
            cfg.tricks = parse_tricks(&mut s)?;
            s.finish()?;
        }
        if let Some(mut s) = take("embedding") {
            (cfg.walks, cfg.skipgram) = parse_embedding(&mut s)?;
            s.finish()?;
        }
        if let Some(mut s) = take("experiment") {
            if let Some(v) = s.parse::<String>("seeds")? {
                cfg.seeds = parse_seeds(&v)?;
            }
            if let Some(rows) = s.list::<TrickSet>("ablate")? {
                cfg.ablate = rows;
            }
            s.finish()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file and checks that the dataset files it
    /// names exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::parse(&text, base)?;
        for p in cfg.dataset_paths() {
            let full = cfg.resolve(p);
            if !full.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("dataset file {} does not exist", full.display()),
                )));
            }
        }
        Ok(cfg)
    }

    fn dataset_paths(&self) -> Vec<&Path> {
        match &self.dataset {
            DatasetSource::Sbm(_) => Vec::new(),
            DatasetSource::Container(p) => vec![p],
            DatasetSource::Files {
                edges,
                features,
                labels,
                train,
                valid,
                test,
            } => vec![edges, features, labels, train, valid, test],
        }
        .into_iter()
        .map(PathBuf::as_path)
        .collect()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let with_dims = GcnResConfig {
            input_dim: 1,
            num_classes: 1,
            ..self.model.clone()
        };
        with_dims.validate().map_err(|e| Error::Config(format!("[model] {e}")))?;
        self.walks.validate().map_err(|e| Error::Config(format!("[embedding] {e}")))?;
        self.skipgram
            .validate()
            .map_err(|e| Error::Config(format!("[embedding] {e}")))?;
        if self.training.epochs == 0 || self.training.lr <= 0.0 {
            return Err(Error::Config("[training] needs epochs ≥ 1 and lr > 0".into()));
        }
        if self.tricks.flag_steps == 0 || self.tricks.flag_step_size < 0.0 {
            return Err(Error::Config("[tricks] needs flag_steps ≥ 1 and flag_step_size ≥ 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("[experiment] needs at least one seed".into()));
        }
        Ok(())
    }

    /// The trick combination described by `[model]` and `[tricks]`.
    pub fn trick_set(&self) -> TrickSet {
        TrickSet {
            architecture: self.model.architecture,
            embedding: self.tricks.embedding.is_some(),
            correct_smooth: self.tricks.correct_smooth,
            flag: self.tricks.flag,
            label_usage: self.tricks.label_usage,
        }
    }

    /// Canonical text form: every section and key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kv = |out: &mut String, k: &str, v: &dyn fmt::Display| {
            writeln!(out, "{k} = {v}").unwrap();
        };
        out += "[dataset]\n";
        match &self.dataset {
            DatasetSource::Sbm(p) => {
                kv(&mut out, "source", &"sbm");
                kv(&mut out, "block_sizes", &join(&p.block_sizes));
                kv(&mut out, "p_in", &p.p_in);
                kv(&mut out, "p_out", &p.p_out);
                kv(&mut out, "feature_dim", &p.feature_dim);
                kv(&mut out, "feature_signal", &p.feature_signal);
                kv(&mut out, "seed", &p.seed);
            }
            DatasetSource::Container(p) => {
                kv(&mut out, "source", &"container");
                kv(&mut out, "path", &p.display());
            }
            DatasetSource::Files {
                edges,
                features,
                labels,
                train,
                valid,
                test,
            } => {
                kv(&mut out, "source", &"files");
                for (k, p) in [
                    ("edges", edges),
                    ("features", features),
                    ("labels", labels),
                    ("train", train),
                    ("valid", valid),
                    ("test", test),
                ] {
                    kv(&mut out, k, &p.display());
                }
            }
        }
        let m = &self.model;
        out += "\n[model]\n";
        kv(&mut out, "architecture", &name_of(&ARCHITECTURES, m.architecture));
        kv(&mut out, "layers", &m.layers);
        kv(&mut out, "hidden_dim", &m.hidden_dim);
        kv(&mut out, "alpha", &m.alpha);
        kv(&mut out, "beta", &m.beta);
        kv(&mut out, "learnable_coefficients", &m.learnable_coefficients);
        kv(&mut out, "dropout", &m.dropout);
        kv(&mut out, "norm", &name_of(&NORMS, m.norm));
        kv(&mut out, "pre_activated", &m.pre_activated);
        kv(&mut out, "aggregation", &name_of(&AGGREGATIONS, m.aggregation));
        kv(&mut out, "aggregation_weights", &name_of(&AGG_WEIGHTS, m.aggregation_weights));

        let t = &self.training;
        out += "\n[training]\n";
        kv(&mut out, "epochs", &t.epochs);
        kv(&mut out, "lr", &t.lr);
        kv(&mut out, "weight_decay", &t.weight_decay);
        kv(&mut out, "metric", &name_of(&METRICS, t.metric));
        match t.early_stop_patience {
            Some(p) => kv(&mut out, "early_stop_patience", &p),
            None => kv(&mut out, "early_stop_patience", &"none"),
        }
        match &t.sampler {
            Sampler::FullBatch => kv(&mut out, "sampler", &"full_batch"),
            Sampler::RandomSubgraph { batch_nodes } => {
                kv(&mut out, "sampler", &"random_subgraph");
                kv(&mut out, "batch_nodes", batch_nodes);
            }
            Sampler::Neighbor { fanouts, batch_size } => {
                kv(&mut out, "sampler", &"neighbor");
                kv(&mut out, "fanouts", &join(fanouts));
                kv(&mut out, "batch_size", batch_size);
            }
            Sampler::SaintWalk { batch_size } => {
                kv(&mut out, "sampler", &"saint");
                kv(&mut out, "batch_size", batch_size);
            }
        }

        let k = &self.tricks;
        out += "\n[tricks]\n";
        match &k.embedding {
            Some(p) => kv(&mut out, "embedding", &p.display()),
            None => kv(&mut out, "embedding", &"none"),
        }
        kv(&mut out, "merge", &name_of(&MERGES, k.merge));
        kv(&mut out, "correct_smooth", &name_of(&LABEL_SETS, k.correct_smooth));
        kv(&mut out, "cs_correct_alpha", &k.cs.correct_alpha);
        kv(&mut out, "cs_correct_iters", &k.cs.correct_iters);
        kv(&mut out, "cs_smooth_alpha", &k.cs.smooth_alpha);
        kv(&mut out, "cs_smooth_iters", &k.cs.smooth_iters);
        match k.cs.scale {
            ResidualScale::Auto => kv(&mut out, "cs_scale", &"auto"),
            ResidualScale::Fixed(s) => kv(&mut out, "cs_scale", &s),
        }
        kv(&mut out, "flag", &k.flag);
        kv(&mut out, "flag_steps", &k.flag_steps);
        kv(&mut out, "flag_step_size", &k.flag_step_size);
        kv(&mut out, "flag_raw_only", &k.flag_raw_only);
        kv(&mut out, "label_usage", &k.label_usage);
        kv(&mut out, "label_usage_recycle", &k.label_usage_recycle);

        out += "\n[embedding]\n";
        kv(&mut out, "p", &self.walks.p);
        kv(&mut out, "q", &self.walks.q);
        kv(&mut out, "walk_length", &self.walks.walk_length);
        kv(&mut out, "walks_per_node", &self.walks.walks_per_node);
        kv(&mut out, "seed", &self.walks.seed);
        kv(&mut out, "dim", &self.skipgram.dim);
        kv(&mut out, "window", &self.skipgram.window);
        kv(&mut out, "negatives", &self.skipgram.negatives);
        kv(&mut out, "epochs", &self.skipgram.epochs);
        kv(&mut out, "lr", &self.skipgram.lr);

        out += "\n[experiment]\n";
        kv(&mut out, "seeds", &format_seeds(&self.seeds));
        kv(&mut out, "ablate", &join(&self.ablate));
        out
    }
}
