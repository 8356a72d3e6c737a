//! Line-oriented `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Recognized keys:
//!
//! | key                   | meaning                                        |
//! |-----------------------|------------------------------------------------|
//! | `lr`                  | base learning rate                             |
//! | `beta1`, `beta2`      | AdamW moment decay rates                       |
//! | `weight_decay`        | decoupled weight decay (weights only)          |
//! | `batch_size`          | base mini-batch size                           |
//! | `epochs`              | base training epochs                           |
//! | `seed`                | master seed                                    |
//! | `finetune_lr`         | learning rate per fine-tuning stage            |
//! | `finetune_batch_size` | batch size per fine-tuning stage               |
//! | `finetune_epochs`     | epochs per fine-tuning stage                   |
//! | `stages`              | comma list of levels, `3` or `sigma:quality`   |
//! | `embeddings`          | SPCE file for global descriptors               |
//! | `fallback_to_stub`    | use the stub for ids missing from `embeddings` |
//! | `patches_inline`      | store patch matrices in extracted datasets     |
//! | `skip_bad_images`     | skip undecodable images during extraction      |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::degrade::DegradationLevel;
use crate::error::{Error, Result, ResultExt};
use crate::train::TrainConfig;

pub const KNOWN_KEYS: &[&str] = &[
    "lr",
    "beta1",
    "beta2",
    "weight_decay",
    "batch_size",
    "epochs",
    "seed",
    "finetune_lr",
    "finetune_batch_size",
    "finetune_epochs",
    "stages",
    "embeddings",
    "fallback_to_stub",
    "patches_inline",
    "skip_bad_images",
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(format!(
                    "line {}: unknown key {key:?}",
                    i + 1
                )));
            }
            if values
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::config(format!(
                    "line {}: duplicate key {key:?}",
                    i + 1
                )));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| path.display().to_string())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get_str(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(format!("cannot parse {key} = {v:?}")))
            })
            .transpose()
    }

    /// Overwrite the training fields this file sets.
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        fn set<T: FromStr>(file: &ConfigFile, key: &str, slot: &mut T) -> Result<()> {
            if let Some(v) = file.get(key)? {
                *slot = v;
            }
            Ok(())
        }
        set(self, "lr", &mut cfg.lr)?;
        set(self, "beta1", &mut cfg.beta1)?;
        set(self, "beta2", &mut cfg.beta2)?;
        set(self, "weight_decay", &mut cfg.weight_decay)?;
        set(self, "batch_size", &mut cfg.batch_size)?;
        set(self, "epochs", &mut cfg.epochs)?;
        set(self, "seed", &mut cfg.seed)?;
        set(self, "finetune_lr", &mut cfg.finetune.lr)?;
        set(self, "finetune_batch_size", &mut cfg.finetune.batch_size)?;
        set(self, "finetune_epochs", &mut cfg.finetune.epochs)?;
        if let Some(stages) = self.get_str("stages") {
            cfg.stages = parse_stages(stages)?;
        }
        Ok(())
    }
}

/// Parse a comma-separated stage schedule such as `1,2,3` or `0.5:90,4`.
pub fn parse_stages(s: &str) -> Result<Vec<DegradationLevel>> {
    let stages = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(DegradationLevel::from_str)
        .collect::<Result<Vec<_>>>()?;
    if stages.is_empty() {
        return Err(Error::config("stage schedule is empty"));
    }
    Ok(stages)
}
