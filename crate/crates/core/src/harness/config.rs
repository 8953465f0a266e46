//! Line-based `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors.

use std::collections::HashSet;
use std::str::FromStr;

use super::data::SynthSpec;
use super::train::TrainConfig;
use super::{Encryption, HarnessError};

pub const CONFIG_KEYS: [&str; 20] = [
    "data.image_size",
    "data.classes",
    "data.train_per_class",
    "data.test_per_class",
    "data.marker",
    "data.seed",
    "model.embed_dim",
    "model.depth",
    "model.heads",
    "model.rpe",
    "model.positional",
    "train.epochs",
    "train.batch",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.seed",
    "enc.mode",
    "enc.patch",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub data: SynthSpec,
    pub train: TrainConfig,
}

fn value<T: FromStr>(line: usize, key: &str, text: &str) -> Result<T, HarnessError> {
    text.parse()
        .map_err(|_| HarnessError::Config(format!("line {line}: bad value {text:?} for {key}")))
}

fn flag(line: usize, key: &str, text: &str) -> Result<bool, HarnessError> {
    match text {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config(format!("line {line}: bad flag {text:?} for {key}"))),
    }
}

/// Starts from [`RunConfig::default`] and applies every line. `enc.drop` is
/// also accepted.
pub fn parse_config(text: &str) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {n}: expected key=value")))?;
        let (key, val) = (key.trim(), val.trim());
        if !seen.insert(key.to_string()) {
            return Err(HarnessError::Config(format!("line {n}: {key} given twice")));
        }
        let (d, t) = (&mut cfg.data, &mut cfg.train);
        match key {
            "data.image_size" => d.image_size = value(n, key, val)?,
            "data.classes" => d.classes = value(n, key, val)?,
            "data.train_per_class" => d.train_per_class = value(n, key, val)?,
            "data.test_per_class" => d.test_per_class = value(n, key, val)?,
            "data.marker" => d.marker = flag(n, key, val)?,
            "data.seed" => d.seed = value(n, key, val)?,
            "model.embed_dim" => t.embed_dim = value(n, key, val)?,
            "model.depth" => t.depth = value(n, key, val)?,
            "model.heads" => t.heads = value(n, key, val)?,
            "model.rpe" => t.rpe = flag(n, key, val)?,
            "model.positional" => t.positional = flag(n, key, val)?,
            "train.epochs" => t.epochs = value(n, key, val)?,
            "train.batch" => t.batch = value(n, key, val)?,
            "train.lr" => t.adam.lr = value(n, key, val)?,
            "train.beta1" => t.adam.beta1 = value(n, key, val)?,
            "train.beta2" => t.adam.beta2 = value(n, key, val)?,
            "train.eps" => t.adam.eps = value(n, key, val)?,
            "train.seed" => t.seed = value(n, key, val)?,
            "enc.mode" => t.encryption = Encryption::parse(val)?,
            "enc.patch" => t.patch_size = value(n, key, val)?,
            "enc.drop" => t.drop_ratio = value(n, key, val)?,
            _ => return Err(HarnessError::Config(format!("line {n}: unknown key {key}"))),
        }
    }
    if cfg.train.epochs == 0 || cfg.train.batch == 0 {
        return Err(HarnessError::Config("train.epochs and train.batch must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.train.drop_ratio) {
        return Err(HarnessError::Config("enc.drop must lie in [0,1)".into()));
    }
    if cfg.train.patch_size == 0 || cfg.data.image_size % cfg.train.patch_size != 0 {
        return Err(HarnessError::Config(format!(
            "data.image_size {} is not divisible by enc.patch {}",
            cfg.data.image_size, cfg.train.patch_size
        )));
    }
    Ok(cfg)
}
