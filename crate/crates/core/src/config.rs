//! Flat `key=value` configuration over the train, selection and model
//! settings. Keys are the struct field names.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::selection::SelectionConfig;
use crate::train::TrainConfig;

/// One configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    /// Short alternative spelling, if any.
    pub alias: Option<&'static str>,
    pub help: &'static str,
}

const fn key(key: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, alias: None, help }
}

const fn aliased(key: &'static str, alias: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, alias: Some(alias), help }
}

pub const KEYS: &[KeySpec] = &[
    key("mask_ratio", "mask ratio m"),
    key("recon_ratio", "reconstruction ratio r, a subset of the masked tokens"),
    key("init_ratio", "HOG-seeded ratio s, at most (1-m)/2; defaults to (1-m)/2"),
    aliased("stages", "Ng", "curriculum stage count"),
    key("pattern", "stage pattern: near_far_random | far_near_random"),
    key("measure", "embedding distance: cosine | euclidean | manhattan"),
    key("psts", "progressive token selection; false draws the visible set at random"),
    key("base_lr", "base learning rate before batch and m/r scaling"),
    key("batch_size", "images per step"),
    key("weight_decay", "decoupled weight decay on weight matrices"),
    key("betas", "Adam betas as b1,b2"),
    key("adam_eps", "Adam epsilon"),
    key("warmup_epochs", "linear warmup length in epochs; defaults to 60/800 of T"),
    aliased("epochs", "T", "total training epochs T"),
    key("lr_scale_mode", "peak lr factor: none | mask_over_recon"),
    key("grad_clip", "max global gradient norm, or none"),
    key("mode", "selective | mae_baseline"),
    key("seed", "seed for init, batching, augmentation and selection"),
    key("baseline_mask_ratio", "mask ratio of the baseline mode"),
    key("explosion_threshold", "gradient norm counted as explosive"),
    key("explosion_patience", "consecutive explosive steps before halting"),
    key("checkpoint_every", "periodic checkpoint interval in epochs (0 = final only)"),
    key("workers", "worker threads"),
    key("synthetic_images", "synthetic dataset size when no manifest is given"),
    key("d", "embedding width"),
    key("encoder_depth", "encoder blocks"),
    key("decoder_depth", "decoder blocks"),
    key("heads", "attention heads"),
    key("mlp_ratio", "MLP hidden width over d"),
    aliased("patch", "p", "patch side in pixels"),
    key("image_size", "training image side in pixels"),
    aliased("channels", "C", "image channels"),
    aliased("norm_pix", "norm_pix_targets", "per-patch normalized reconstruction targets"),
];

/// Canonical key for `name` (a key or its alias).
pub fn resolve_key(name: &str) -> Option<&'static str> {
    KEYS.iter().find(|k| k.key == name || k.alias == Some(name)).map(|k| k.key)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}={value:?} is not a boolean"))),
    }
}

/// The three configs of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub model: ModelConfig,
    warmup_set: bool,
    init_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            model: ModelConfig::default(),
            warmup_set: false,
            init_set: false,
        }
    }
}

impl RunConfig {
    /// Sets one key; derived defaults follow later changes of `T` and `m`
    /// until they are set explicitly.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let k = resolve_key(name).ok_or_else(|| Error::Config(format!("unknown config key {name:?}")))?;
        let (t, s, m) = (&mut self.train, &mut self.selection, &mut self.model);
        match k {
            "mask_ratio" => s.mask_ratio = parse(k, value)?,
            "recon_ratio" => s.recon_ratio = parse(k, value)?,
            "init_ratio" => {
                s.init_ratio = parse(k, value)?;
                self.init_set = true;
            }
            "stages" => s.stages = parse(k, value)?,
            "pattern" => s.pattern = value.trim().parse()?,
            "measure" => s.measure = value.trim().parse()?,
            "psts" => s.psts = parse_bool(k, value)?,
            "base_lr" => t.base_lr = parse(k, value)?,
            "batch_size" => t.batch_size = parse(k, value)?,
            "weight_decay" => t.weight_decay = parse(k, value)?,
            "betas" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("betas={value:?} must be b1,b2")))?;
                t.betas = (parse(k, a)?, parse(k, b)?);
            }
            "adam_eps" => t.adam_eps = parse(k, value)?,
            "warmup_epochs" => {
                t.warmup_epochs = parse(k, value)?;
                self.warmup_set = true;
            }
            "epochs" => t.epochs = parse(k, value)?,
            "lr_scale_mode" => t.lr_scale_mode = value.trim().parse()?,
            "grad_clip" => {
                t.grad_clip = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse(k, v)?),
                }
            }
            "mode" => t.mode = value.trim().parse()?,
            "seed" => t.seed = parse(k, value)?,
            "baseline_mask_ratio" => t.baseline_mask_ratio = parse(k, value)?,
            "explosion_threshold" => t.explosion_threshold = parse(k, value)?,
            "explosion_patience" => t.explosion_patience = parse(k, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(k, value)?,
            "workers" => t.workers = parse(k, value)?,
            "synthetic_images" => t.synthetic_images = parse(k, value)?,
            "d" => m.d = parse(k, value)?,
            "encoder_depth" => m.encoder_depth = parse(k, value)?,
            "decoder_depth" => m.decoder_depth = parse(k, value)?,
            "heads" => m.heads = parse(k, value)?,
            "mlp_ratio" => m.mlp_ratio = parse(k, value)?,
            "patch" => m.patch = parse(k, value)?,
            "image_size" => m.image_size = parse(k, value)?,
            "channels" => m.channels = parse(k, value)?,
            "norm_pix" => m.norm_pix = parse_bool(k, value)?,
            _ => unreachable!("key table and setter disagree on {k}"),
        }
        self.refresh_derived();
        Ok(())
    }

    fn refresh_derived(&mut self) {
        if !self.warmup_set {
            self.train.warmup_epochs = self.train.epochs as f64 * 60.0 / 800.0;
        }
        if !self.init_set {
            self.selection.init_ratio = (1.0 - self.selection.mask_ratio) / 2.0;
        }
        self.selection.total_epochs = self.train.epochs;
    }

    /// Current value of `name` in the form [`set`](Self::set) accepts.
    pub fn get(&self, name: &str) -> Option<String> {
        let k = resolve_key(name)?;
        let (t, s, m) = (&self.train, &self.selection, &self.model);
        Some(match k {
            "mask_ratio" => s.mask_ratio.to_string(),
            "recon_ratio" => s.recon_ratio.to_string(),
            "init_ratio" => s.init_ratio.to_string(),
            "stages" => s.stages.to_string(),
            "pattern" => s.pattern.to_string(),
            "measure" => s.measure.to_string(),
            "psts" => s.psts.to_string(),
            "base_lr" => t.base_lr.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "betas" => format!("{},{}", t.betas.0, t.betas.1),
            "adam_eps" => t.adam_eps.to_string(),
            "warmup_epochs" => t.warmup_epochs.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr_scale_mode" => t.lr_scale_mode.to_string(),
            "grad_clip" => t.grad_clip.map_or("none".into(), |c| c.to_string()),
            "mode" => t.mode.to_string(),
            "seed" => t.seed.to_string(),
            "baseline_mask_ratio" => t.baseline_mask_ratio.to_string(),
            "explosion_threshold" => t.explosion_threshold.to_string(),
            "explosion_patience" => t.explosion_patience.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "workers" => t.workers.to_string(),
            "synthetic_images" => t.synthetic_images.to_string(),
            "d" => m.d.to_string(),
            "encoder_depth" => m.encoder_depth.to_string(),
            "decoder_depth" => m.decoder_depth.to_string(),
            "heads" => m.heads.to_string(),
            "mlp_ratio" => m.mlp_ratio.to_string(),
            "patch" => m.patch.to_string(),
            "image_size" => m.image_size.to_string(),
            "channels" => m.channels.to_string(),
            "norm_pix" => m.norm_pix.to_string(),
            _ => unreachable!("key table and getter disagree on {k}"),
        })
    }

    /// Checks all three configs against each other.
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.train.validate(&self.selection)?;
        self.model.validate()
    }

    /// Applies every line of a config file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_pairs(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// `key=value` per key in table order, excluding `skip`.
    pub fn echo(&self, skip: &[&str]) -> Vec<String> {
        KEYS.iter()
            .filter(|k| !skip.contains(&k.key))
            .map(|k| format!("{}={}", k.key, self.get(k.key).expect("listed key")))
            .collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped and
/// keys are checked before anything is applied.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                offset,
                message: format!("expected key=value, found {body:?}"),
            })?;
            let k = k.trim();
            if resolve_key(k).is_none() {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            out.push((k.to_string(), v.trim().to_string()));
        }
        offset += line.len();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let base = RunConfig::default();
        for k in KEYS {
            let mut c = base.clone();
            let v = base.get(k.key).unwrap();
            c.set(k.key, &v).unwrap();
            assert_eq!(c.get(k.key).unwrap(), v, "{}", k.key);
        }
    }

    #[test]
    fn aliases_and_derived_defaults() {
        let mut c = RunConfig::default();
        c.set("T", "800").unwrap();
        c.set("Ng", "4").unwrap();
        assert_eq!((c.train.epochs, c.selection.stages, c.selection.total_epochs), (800, 4, 800));
        assert_eq!(c.train.warmup_epochs, 60.0);
        c.set("warmup_epochs", "5").unwrap();
        c.set("T", "100").unwrap();
        assert_eq!(c.train.warmup_epochs, 5.0);
        c.set("mask_ratio", "0.75").unwrap();
        assert_eq!(c.selection.init_ratio, 0.125);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("mask", "0.1"), Err(Error::Config(m)) if m.contains("mask")));
        assert!(parse_pairs("d=8\nbogus=1\n").is_err());
        assert_eq!(parse_pairs("# c\n d = 8 # width\n\n").unwrap(), [("d".into(), "8".into())]);
    }
}
