//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error that lists the valid ones.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub trait KeyValue: Sized {
    const KEYS: &'static [&'static str];

    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// Current values in `KEYS` order.
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn unknown(key: &str) -> Error {
        Error::Config(format!("unknown key `{key}`; valid keys: {}", Self::KEYS.join(", ")))
    }

    fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_str(&text)
    }

    /// Applies a single `key=value` override.
    fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    fn to_kv_string(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    ItemDropout,
    SequenceReorder,
    None,
}

impl FromStr for Augmentation {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "id" | "item_dropout" => Ok(Augmentation::ItemDropout),
            "sr" | "sequence_reorder" => Ok(Augmentation::SequenceReorder),
            "none" => Ok(Augmentation::None),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::ItemDropout => "ID",
            Augmentation::SequenceReorder => "SR",
            Augmentation::None => "none",
        })
    }
}

/// Nonlinearity applied at the end of every propagation layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Row-stochastic softmax over pair scores.
    Softmax,
    /// `exp(f_ij) / Σ_j sqrt(exp(f_ij))`, kept for comparison; rows do not sum to 1.
    Sqrt,
}

impl FromStr for AttentionMode {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "softmax" => Ok(AttentionMode::Softmax),
            "sqrt" => Ok(AttentionMode::Sqrt),
            _ => Err(()),
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Softmax => "softmax",
            AttentionMode::Sqrt => "sqrt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `w / sqrt(deg(x) deg(y))`
    Symmetric,
    /// `w / deg(x)`
    Row,
}

impl FromStr for Normalization {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "symmetric" => Ok(Normalization::Symmetric),
            "row" => Ok(Normalization::Row),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Symmetric => "symmetric",
            Normalization::Row => "row",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout: f64,
    pub dim: usize,
    pub layers: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub ssl_reg: f64,
    pub augmentation: Augmentation,
    pub use_ea: bool,
    pub attention: AttentionMode,
    pub activation: Activation,
    pub normalization: Normalization,
    pub train_fraction: f64,
    pub top_k: usize,
    /// Early-stopping patience in epochs on validation RC@K. Only consulted
    /// when the trainer is given a validation set; 0 disables it.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            lr: 0.005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout: 0.1,
            dim: 16,
            layers: 2,
            alpha: 0.3,
            beta: 0.3,
            tau: 0.2,
            ssl_reg: 1e-3,
            augmentation: Augmentation::ItemDropout,
            use_ea: true,
            attention: AttentionMode::Softmax,
            activation: Activation::LeakyRelu(0.2),
            normalization: Normalization::Symmetric,
            train_fraction: 0.8,
            top_k: 10,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.dim == 0 || self.layers == 0 || self.top_k == 0 {
            return bad("batch_size, dim, layers and top_k must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("alpha and beta must lie in [0, 1], got {} and {}", self.alpha, self.beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.tau > 0.0) || !(self.ssl_reg >= 0.0) {
            return bad("tau must be positive and ssl_reg non-negative".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        Ok(())
    }

    /// Whether the contrastive branch contributes to the loss at all.
    pub fn ssl_active(&self) -> bool {
        self.beta > 0.0 && self.augmentation != Augmentation::None
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::LeakyRelu(_) => "leaky_relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Identity => "identity",
    }
}

impl KeyValue for TrainConfig {
    const KEYS: &'static [&'static str] = &[
        "epochs",
        "batch_size",
        "lr",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "dropout",
        "dim",
        "layers",
        "alpha",
        "beta",
        "tau",
        "ssl_reg",
        "augmentation",
        "use_ea",
        "attention",
        "activation",
        "leaky_slope",
        "normalization",
        "train_fraction",
        "top_k",
        "patience",
        "seed",
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "ssl_reg" => self.ssl_reg = parse_value(key, value)?,
            "augmentation" => self.augmentation = parse_value(key, value)?,
            "use_ea" => self.use_ea = parse_value(key, value)?,
            "attention" => self.attention = parse_value(key, value)?,
            "activation" => {
                self.activation = match value {
                    "leaky_relu" => match self.activation {
                        Activation::LeakyRelu(s) => Activation::LeakyRelu(s),
                        _ => Activation::LeakyRelu(0.2),
                    },
                    "sigmoid" => Activation::Sigmoid,
                    "identity" => Activation::Identity,
                    _ => return Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
                }
            }
            "leaky_slope" => self.activation = Activation::LeakyRelu(parse_value(key, value)?),
            "normalization" => self.normalization = parse_value(key, value)?,
            "train_fraction" => self.train_fraction = parse_value(key, value)?,
            "top_k" => self.top_k = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Self::unknown(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let slope = match self.activation {
            Activation::LeakyRelu(s) => s,
            _ => 0.2,
        };
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("dropout", self.dropout.to_string()),
            ("dim", self.dim.to_string()),
            ("layers", self.layers.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("tau", self.tau.to_string()),
            ("ssl_reg", self.ssl_reg.to_string()),
            ("augmentation", self.augmentation.to_string()),
            ("use_ea", self.use_ea.to_string()),
            ("attention", self.attention.to_string()),
            ("activation", activation_name(self.activation).to_string()),
            ("leaky_slope", slope.to_string()),
            ("normalization", self.normalization.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("top_k", self.top_k.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}
