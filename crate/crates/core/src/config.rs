//! Model, training and evaluation settings plus the flat `section.key = value`
//! configuration file they are read from.
//!
//! A configuration file must define every key listed by
//! [`Config::default`]`.to_text()`; unknown keys are rejected. Lines starting
//! with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::proposal::Scheme;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of sampled clips; side of the candidate grid.
    pub t: usize,
    /// Hidden size.
    pub c: usize,
    /// Longest query kept after tokenization.
    pub l_max: usize,
    /// Dimension of the raw clip features.
    pub input_dim: usize,
    /// Dimension of the word vectors.
    pub word_dim: usize,
    pub gru_layers: usize,
    pub ngram_kernels: Vec<usize>,
    pub comparison_blocks: usize,
    pub groups: usize,
    pub kernel: usize,
    pub padding: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub scheme: Scheme,
    /// Fine-grained encoders plus conditioned interaction.
    pub fine_interaction: bool,
    /// Stacked group-convolution comparison blocks.
    pub comparison: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t: 64,
            c: 256,
            l_max: 32,
            input_dim: 4096,
            word_dim: 300,
            gru_layers: 2,
            ngram_kernels: vec![1, 2, 3],
            comparison_blocks: 4,
            groups: 32,
            kernel: 7,
            padding: 3,
            theta_min: 0.5,
            theta_max: 1.0,
            scheme: Scheme::Sparse,
            fine_interaction: true,
            comparison: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.t == 0 || self.c == 0 || self.l_max == 0 {
            return fail("model.T, model.C and model.L_max must be positive".into());
        }
        if self.input_dim == 0 || self.word_dim == 0 {
            return fail("feature and word dimensions must be positive".into());
        }
        if !self.c.is_multiple_of(2) {
            return fail(format!("model.C = {} must be even (two recurrent directions)", self.c));
        }
        if self.gru_layers == 0 {
            return fail("model.gru_layers must be at least 1".into());
        }
        if self.groups == 0 || !self.c.is_multiple_of(self.groups) {
            return fail(format!(
                "model.C = {} is not divisible by model.groups = {}",
                self.c, self.groups
            ));
        }
        if self.kernel == 0 || 2 * self.padding + 1 != self.kernel {
            return fail(format!(
                "kernel {} with padding {} does not preserve the grid size",
                self.kernel, self.padding
            ));
        }
        if self.ngram_kernels.is_empty() || self.ngram_kernels.contains(&0) {
            return fail("model.ngram_kernels must list positive kernel sizes".into());
        }
        if !(0.0..=1.0).contains(&self.theta_min)
            || !(0.0..=1.0).contains(&self.theta_max)
            || self.theta_min >= self.theta_max
        {
            return fail(format!(
                "thresholds must satisfy 0 <= theta_min < theta_max <= 1, got ({}, {})",
                self.theta_min, self.theta_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 15,
            seed: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr = {} is invalid", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "train.batch_size and train.epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub nms_threshold: f64,
    pub ranks: Vec<usize>,
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nms_threshold: 0.49,
            ranks: vec![1, 5],
            iou_thresholds: vec![0.3, 0.5, 0.7],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(Error::Config("eval.ranks must list values >= 1".into()));
        }
        if self.iou_thresholds.is_empty()
            || self.iou_thresholds.iter().any(|m| !(*m > 0.0 && *m <= 1.0))
        {
            return Err(Error::Config("eval.iou_thresholds must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Every key with its current value, one `key = value` per line.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let e = &self.eval;
        vec![
            ("model.T", m.t.to_string()),
            ("model.C", m.c.to_string()),
            ("model.L_max", m.l_max.to_string()),
            ("model.input_dim", m.input_dim.to_string()),
            ("model.word_dim", m.word_dim.to_string()),
            ("model.gru_layers", m.gru_layers.to_string()),
            ("model.ngram_kernels", join(&m.ngram_kernels)),
            ("model.comparison_blocks", m.comparison_blocks.to_string()),
            ("model.groups", m.groups.to_string()),
            ("model.kernel", m.kernel.to_string()),
            ("model.padding", m.padding.to_string()),
            ("model.theta_min", m.theta_min.to_string()),
            ("model.theta_max", m.theta_max.to_string()),
            ("model.scheme", m.scheme.to_string()),
            ("model.fine_interaction", m.fine_interaction.to_string()),
            ("model.comparison", m.comparison.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.checkpoint_dir", t.checkpoint_dir.display().to_string()),
            ("eval.nms_threshold", e.nms_threshold.to_string()),
            ("eval.ranks", join(&e.ranks)),
            ("eval.iou_thresholds", join(&e.iou_thresholds)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Parses a complete configuration; every key must be present.
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_pairs(text)?;
        let mut cfg = Config::default();
        let known: Vec<&str> = cfg.entries().into_iter().map(|(k, _)| k).collect();
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        for key in &known {
            let value = map
                .get(*key)
                .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "model.T" => m.t = parse_value(key, value)?,
            "model.C" => m.c = parse_value(key, value)?,
            "model.L_max" => m.l_max = parse_value(key, value)?,
            "model.input_dim" => m.input_dim = parse_value(key, value)?,
            "model.word_dim" => m.word_dim = parse_value(key, value)?,
            "model.gru_layers" => m.gru_layers = parse_value(key, value)?,
            "model.ngram_kernels" => m.ngram_kernels = parse_list(key, value)?,
            "model.comparison_blocks" => m.comparison_blocks = parse_value(key, value)?,
            "model.groups" => m.groups = parse_value(key, value)?,
            "model.kernel" => m.kernel = parse_value(key, value)?,
            "model.padding" => m.padding = parse_value(key, value)?,
            "model.theta_min" => m.theta_min = parse_value(key, value)?,
            "model.theta_max" => m.theta_max = parse_value(key, value)?,
            "model.scheme" => m.scheme = parse_value(key, value)?,
            "model.fine_interaction" => m.fine_interaction = parse_value(key, value)?,
            "model.comparison" => m.comparison = parse_value(key, value)?,
            "train.lr" => t.lr = parse_value(key, value)?,
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.epochs" => t.epochs = parse_value(key, value)?,
            "train.seed" => t.seed = parse_value(key, value)?,
            "train.checkpoint_dir" => t.checkpoint_dir = PathBuf::from(value),
            "eval.nms_threshold" => e.nms_threshold = parse_value(key, value)?,
            "eval.ranks" => e.ranks = parse_list(key, value)?,
            "eval.iou_thresholds" => e.iou_thresholds = parse_list(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
        })?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}
