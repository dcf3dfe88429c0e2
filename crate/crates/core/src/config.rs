//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Training keys live under
//! `train.`, `augment.`, `naw.`, `model.` and `eval.`; dataset keys under
//! `data.`. Unknown keys are errors.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::loss::KernelMean;
use crate::tensors::Real;
use crate::train::TrainConfig;

/// `(key, value)` pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::config(format!("line {}: empty key or value", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected true or false, got `{value}`"
        ))),
    }
}

fn kernel_mean(key: &str, value: &str) -> Result<KernelMean> {
    if value == "uniform" {
        return Ok(KernelMean::Uniform);
    }
    value
        .split(',')
        .map(|s| num::<Real>(key, s.trim()))
        .collect::<Result<Vec<_>>>()
        .map(KernelMean::Explicit)
}

/// Sets one training key. Returns `false` for keys outside the training
/// namespaces.
pub fn apply_train(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "train.epochs" => cfg.epochs = num(key, value)?,
        "train.batch_size" => cfg.batch_size = num(key, value)?,
        "train.lr" => cfg.optimizer.lr = num(key, value)?,
        "train.beta1" => cfg.optimizer.beta1 = num(key, value)?,
        "train.beta2" => cfg.optimizer.beta2 = num(key, value)?,
        "train.eps" => cfg.optimizer.eps = num(key, value)?,
        "train.weight_decay" => cfg.optimizer.weight_decay = num(key, value)?,
        "train.seed" => cfg.seed = num(key, value)?,
        "augment.enabled" => cfg.use_augment = boolean(key, value)?,
        "augment.lambda_min" => cfg.augment.lambda_min = num(key, value)?,
        "augment.lambda_max" => cfg.augment.lambda_max = num(key, value)?,
        "augment.erase_ratio" => cfg.augment.erase_ratio = num(key, value)?,
        "augment.frame_skip" => cfg.augment.frame_skip = boolean(key, value)?,
        "augment.pixel_erase" => cfg.augment.pixel_erase = boolean(key, value)?,
        "naw.enabled" => cfg.use_naw = boolean(key, value)?,
        "naw.mu" => cfg.naw.mean = kernel_mean(key, value)?,
        "naw.sigma" => cfg.naw.sigma = num(key, value)?,
        "naw.weight_cap" => {
            cfg.naw.weight_cap = match value {
                "none" => None,
                v => Some(num(key, v)?),
            }
        }
        "model.dim" => cfg.dim = num(key, value)?,
        "model.heads" => cfg.heads = num(key, value)?,
        "model.blocks" => cfg.blocks = num(key, value)?,
        "model.ff_dim" => cfg.ff_dim = num(key, value)?,
        "eval.per_frame" => cfg.per_frame_eval = boolean(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Sets one dataset key. Returns `false` for keys outside `data.`.
pub fn apply_gen(cfg: &mut GenConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "data.classes" => cfg.classes = num(key, value)?,
        "data.clips" => cfg.clips = num(key, value)?,
        "data.frames" => cfg.frames = num(key, value)?,
        "data.channels" => cfg.channels = num(key, value)?,
        "data.height" => cfg.height = num(key, value)?,
        "data.width" => cfg.width = num(key, value)?,
        "data.imbalance" => cfg.imbalance = num(key, value)?,
        "data.noise" => cfg.label_noise = num(key, value)?,
        "data.snr" => cfg.snr = num(key, value)?,
        "data.seed" => cfg.seed = num(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn unknown(key: &str) -> Error {
    Error::config(format!("unknown key `{key}`"))
}

pub fn train_from_str(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    for (k, v) in parse(text)? {
        if !apply_train(&mut cfg, &k, &v)? {
            return Err(unknown(&k));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn gen_from_str(text: &str, base: GenConfig) -> Result<GenConfig> {
    let mut cfg = base;
    for (k, v) in parse(text)? {
        if !apply_gen(&mut cfg, &k, &v)? {
            return Err(unknown(&k));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_train(path: &Path) -> Result<TrainConfig> {
    train_from_str(&fs::read_to_string(path)?, TrainConfig::default())
}

pub fn load_gen(path: &Path) -> Result<GenConfig> {
    gen_from_str(&fs::read_to_string(path)?, GenConfig::default())
}
