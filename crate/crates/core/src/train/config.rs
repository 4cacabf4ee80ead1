//! Training configuration: a TOML document with dotted-path overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backdrop::{check_probability, ScalingConvention};
use crate::error::{Error, Result};
use crate::gp::GpClassSpec;
use crate::nn::{preset, ArchSpec, LayerSpec};

/// Mask probability keys used by the composite loss rather than by layers.
pub const LOSS_MASK_XE: &str = "p_X";
pub const LOSS_MASK_DIST: &str = "p_D";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset(String),
    Inline(ArchSpec),
}

impl ArchChoice {
    pub fn resolve(&self) -> Result<ArchSpec> {
        match self {
            ArchChoice::Preset(name) => preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture preset `{name}` (known: {})",
                    crate::nn::PRESETS.join(", ")
                ))
            }),
            ArchChoice::Inline(spec) => Ok(spec.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy on the network output.
    #[default]
    Xe,
    /// Sigmoid rank statistic on a single score per sample.
    Rank,
    /// Cross-entropy on the output plus latent distance on the input of the
    /// last layer, each behind its own batch mask (`p_X`, `p_D`).
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Imbalance {
    /// Keep `class_a` (relabeled 1) and a `ratio`-times smaller share of
    /// `class_b` (relabeled 0).
    Binary {
        class_a: usize,
        class_b: usize,
        ratio: f64,
    },
    /// Class `c` keeps `unit · (c + 1)` samples.
    Linear { unit: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// GPTX texture files. `classes` gives the class grid used for
    /// scale-specific accuracy; it defaults to the desk-scale grid.
    Gptx {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        classes: Option<Vec<GpClassSpec>>,
    },
    /// CIFAR-10 binary batches in `dir`, optionally truncated to an
    /// imbalanced subset (applied to the training split only).
    Cifar10 {
        dir: PathBuf,
        #[serde(default)]
        imbalance: Option<Imbalance>,
    },
    /// `<class>/<name>.pgm` folders.
    ImageFolder { train: PathBuf, test: PathBuf },
    /// Gaussian clouds drawn from the data seed; class `c` has
    /// `train_counts[c]` training and `test_counts[c]` test samples.
    Clouds {
        train_counts: Vec<usize>,
        test_counts: Vec<usize>,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
}

fn default_dim() -> usize {
    2
}

fn default_separation() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub init: u64,
    #[serde(default)]
    pub data: u64,
    #[serde(default)]
    pub mask: u64,
}

fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    1e-4
}
fn default_one() -> f64 {
    1.0
}
fn default_eval_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchChoice,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Drop probabilities keyed by mask tag (plus `p_X`, `p_D` for the
    /// composite loss). Tags left out keep probability 0.
    #[serde(default)]
    pub mask: BTreeMap<String, f64>,
    #[serde(default)]
    pub scaling_convention: ScalingConvention,
    /// Skip backward work at fully masked positions.
    #[serde(default)]
    pub short_circuit: bool,
    #[serde(default = "default_one")]
    pub tau: f64,
    #[serde(default = "default_one")]
    pub d: f64,
    /// Class-stratified batches; defaults to on for the rank loss.
    #[serde(default)]
    pub stratified: Option<bool>,
    pub data: DataConfig,
    #[serde(default)]
    pub seeds: Seeds,
    /// Evaluate every this many epochs (and always after the last).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Sets `path` (dot-separated) in `table` to `raw`, read as a TOML value;
/// text that is not valid TOML is taken as a bare string.
pub fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{path}`")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl TrainConfig {
    /// Parses `text` and applies `key=value` overrides in order.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            apply_override(&mut table, k.trim(), v.trim())?;
        }
        let cfg: TrainConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    /// The fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        for (tag, &p) in &self.mask {
            check_probability(p).map_err(|e| Error::Config(format!("mask.{tag}: {e}")))?;
        }
        let spec = self.arch.resolve()?;
        let tags = spec.mask_tags();
        for tag in self.mask.keys() {
            let loss_mask = self.loss == LossKind::Composite
                && (tag == LOSS_MASK_XE || tag == LOSS_MASK_DIST);
            if !loss_mask && !tags.contains(&tag.as_str()) {
                return Err(Error::Config(format!(
                    "mask.{tag} matches no masking layer of `{}` (tags: {})",
                    spec.name,
                    tags.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Drop probability for `tag` (0 when not configured).
    pub fn mask_p(&self, tag: &str) -> f64 {
        self.mask.get(tag).copied().unwrap_or(0.0)
    }

    /// The architecture with configured probabilities written into its
    /// masking layers.
    pub fn arch_spec(&self) -> Result<ArchSpec> {
        let mut spec = self.arch.resolve()?;
        for layer in &mut spec.layers {
            if let LayerSpec::Mask { p, tag, .. } = layer {
                *p = self.mask_p(tag);
            }
        }
        Ok(spec)
    }

    pub fn stratified(&self) -> bool {
        self.stratified.unwrap_or(self.loss == LossKind::Rank)
    }
}
