//! Run configuration: `key = value` lines, `#` starts a comment line.
//!
//! ```text
//! net.family = wdsr-a
//! net.width = 32
//! train.lr = auto
//! seed = 7
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::NetSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub net: NetSpec,
    /// Take the channel means from the training manifest.
    pub rgb_mean_auto: bool,
    pub train: TrainConfig,
    /// Pick the starting rate from the normalization.
    pub lr_auto: bool,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    /// LR input size for budget Mult-Adds.
    pub budget_input: (usize, usize),
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetSpec::default(),
            rgb_mean_auto: true,
            train: TrainConfig::default(),
            lr_auto: true,
            train_manifest: None,
            val_manifest: None,
            budget_input: (48, 48),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected a boolean, got `{value}`"
        ))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (value != "none" && !value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".into(), |p| p.display().to_string())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some(net_key) = key.strip_prefix("net.") {
            if net_key == "rgb_mean" && value == "auto" {
                self.rgb_mean_auto = true;
                return Ok(());
            }
            self.net.set_key(net_key, value)?;
            if net_key == "rgb_mean" {
                self.rgb_mean_auto = false;
            }
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "train.lr" if value == "auto" => self.lr_auto = true,
            "train.lr" => {
                t.lr0 = parse(key, value)?;
                self.lr_auto = false;
            }
            "train.lr_halving_period" => t.lr_halving_period = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.patch_size" => t.patch_size = parse(key, value)?,
            "train.steps" => t.max_steps = parse(key, value)?,
            "train.augment" => t.augment = parse_bool(key, value)?,
            "train.val_every" => t.val_every = parse(key, value)?,
            "train.shave" => t.shave = parse(key, value)?,
            "adam.beta1" => t.adam.beta1 = parse(key, value)?,
            "adam.beta2" => t.adam.beta2 = parse(key, value)?,
            "adam.eps" => t.adam.eps = parse(key, value)?,
            "data.train_manifest" => self.train_manifest = parse_path(value),
            "data.val_manifest" => self.val_manifest = parse_path(value),
            "budget.input" => {
                let (h, w) = value.split_once('x').ok_or_else(|| {
                    Error::Config(format!("`{key}`: expected HxW, got `{value}`"))
                })?;
                self.budget_input = (parse(key, h.trim())?, parse(key, w.trim())?);
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| {
                Error::Config(format!(
                    "line {}: {}",
                    i + 1,
                    e.to_string().trim_start_matches("config: ")
                ))
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| {
            Error::Config(format!(
                "{}: {}",
                path.display(),
                e.to_string().trim_start_matches("config: ")
            ))
        })
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.net.entries() {
            let v = if k == "rgb_mean" && self.rgb_mean_auto {
                "auto".into()
            } else {
                v
            };
            out += &format!("net.{k} = {v}\n");
        }
        let t = &self.train;
        let lr = if self.lr_auto {
            "auto".to_string()
        } else {
            t.lr0.to_string()
        };
        let rows = [
            ("seed", t.seed.to_string()),
            ("train.lr", lr),
            ("train.lr_halving_period", t.lr_halving_period.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.patch_size", t.patch_size.to_string()),
            ("train.steps", t.max_steps.to_string()),
            ("train.augment", t.augment.to_string()),
            ("train.val_every", t.val_every.to_string()),
            ("train.shave", t.shave.to_string()),
            ("adam.beta1", t.adam.beta1.to_string()),
            ("adam.beta2", t.adam.beta2.to_string()),
            ("adam.eps", t.adam.eps.to_string()),
            ("data.train_manifest", path_text(&self.train_manifest)),
            ("data.val_manifest", path_text(&self.val_manifest)),
            (
                "budget.input",
                format!("{}x{}", self.budget_input.0, self.budget_input.1),
            ),
        ];
        for (k, v) in rows {
            out += &format!("{k} = {v}\n");
        }
        out
    }

    /// Training settings with the starting rate resolved.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.lr_auto {
            t.lr0 = TrainConfig::default_lr(self.net.block.normalization);
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train_config().validate(self.net.scale)
    }
}
