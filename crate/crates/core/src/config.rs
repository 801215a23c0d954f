//! Training configuration and its line-oriented `key=value` text form.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected, and every value is range-checked after parsing.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::embedding::{Reduction, DEFAULT_MARGIN, WORD_EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyMode, Normalization};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    /// Training stops once the learning rate falls below this.
    pub min_lr: f64,
    pub margin: f64,
    pub reduction: Reduction,
    pub normalization: Normalization,
    pub adjacency: AdjacencyMode,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub common_dim: usize,
    pub word_dim: usize,
    /// Frames kept per video; 0 keeps what the feature file holds.
    pub frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            batch_size: 64,
            max_epochs: 50,
            lr: 1e-4,
            lr_decay_factor: 0.5,
            plateau_patience: 3,
            min_lr: 1e-8,
            margin: DEFAULT_MARGIN,
            reduction: Reduction::Sum,
            normalization: Normalization::Rw,
            adjacency: AdjacencyMode::Raw,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            common_dim: 2048,
            word_dim: WORD_EMBEDDING_DIM,
            frames: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "seed",
        "batch_size",
        "max_epochs",
        "lr",
        "lr_decay_factor",
        "plateau_patience",
        "min_lr",
        "margin",
        "reduction",
        "normalization",
        "adjacency",
        "beta1",
        "beta2",
        "eps",
        "common_dim",
        "word_dim",
        "frames",
    ];

    /// Sets one key. Values are not range-checked here; see [`TrainConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "max_epochs" => self.max_epochs = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse_value(key, v)?,
            "plateau_patience" => self.plateau_patience = parse_value(key, v)?,
            "min_lr" => self.min_lr = parse_value(key, v)?,
            "margin" => self.margin = parse_value(key, v)?,
            "reduction" => self.reduction = v.parse()?,
            "normalization" => self.normalization = v.parse()?,
            "adjacency" => self.adjacency = v.parse()?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "eps" => self.eps = parse_value(key, v)?,
            "common_dim" => self.common_dim = parse_value(key, v)?,
            "word_dim" => self.word_dim = parse_value(key, v)?,
            "frames" => self.frames = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "lr" => self.lr.to_string(),
            "lr_decay_factor" => self.lr_decay_factor.to_string(),
            "plateau_patience" => self.plateau_patience.to_string(),
            "min_lr" => self.min_lr.to_string(),
            "margin" => self.margin.to_string(),
            "reduction" => self.reduction.to_string(),
            "normalization" => self.normalization.to_string(),
            "adjacency" => self.adjacency.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "common_dim" => self.common_dim.to_string(),
            "word_dim" => self.word_dim.to_string(),
            "frames" => self.frames.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs < 1 {
            return fail("max_epochs must be at least 1".into());
        }
        if !pos(self.lr) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return fail(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            ));
        }
        if self.plateau_patience < 1 {
            return fail("plateau_patience must be at least 1".into());
        }
        if !(self.min_lr >= 0.0 && self.min_lr.is_finite()) {
            return fail(format!("min_lr must be non-negative, got {}", self.min_lr));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be non-negative, got {}", self.margin));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !pos(self.eps) {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        if self.common_dim < 1 || self.word_dim < 1 {
            return fail("common_dim and word_dim must be at least 1".into());
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key on its own line; re-parses to an equal config.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k).expect("known key"));
        }
        out
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key=value, got `{line}`",
                lineno + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
