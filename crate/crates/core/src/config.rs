//! Flat `key=value` run settings with precedence flags > file > defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::{AdamConfig, TrainConfig};
use crate::unet::UNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("in_channels", "3"),
    ("out_channels", "1"),
    ("base_width", "64"),
    ("depth", "4"),
    ("epochs", "50"),
    ("batch_size", "2"),
    ("learning_rate", "0.0001"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("adam_eps", "0.00000001"),
    ("scheduler_factor", "0.5"),
    ("scheduler_patience", "5"),
    ("val_ratio", "0.2"),
    ("seed", "0"),
    ("size", "512x512"),
    ("angle", "45"),
    ("threshold", "0.5"),
    ("presence_threshold", "0.001"),
    ("warmup", "1"),
    ("llm_endpoint", ""),
    ("llm_model", "default"),
    ("llm_token_env", "DRSEG_LLM_TOKEN"),
    ("llm_timeout_secs", "20"),
];

pub fn default_of(key: &str) -> Option<&'static str> {
    DEFAULTS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub value: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    settings: BTreeMap<&'static str, Setting>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            settings: DEFAULTS
                .iter()
                .map(|&(k, v)| {
                    (
                        k,
                        Setting {
                            value: v.to_string(),
                            source: Source::Default,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// `"HxW"` into `(h, w)`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size must look like 512x512, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str, source: Source, origin: &str) -> Result<()> {
        let (k, _) = DEFAULTS
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::Config(format!("{origin}: unknown key {key:?}")))?;
        self.settings.insert(
            k,
            Setting {
                value: value.to_string(),
                source,
            },
        );
        Ok(())
    }

    /// Applies a `key=value` text; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim(), Source::File, &format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_flag(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value, Source::Flag, "command line")
    }

    pub fn setting(&self, key: &str) -> Option<&Setting> {
        self.settings.get(key)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.settings.get(key).map(|s| s.value.as_str()).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?} ({} value)", self.settings[key].source)))
    }

    pub fn size(&self) -> Result<(usize, usize)> {
        parse_size(self.raw("size"))
    }

    pub fn unet(&self) -> Result<UNetConfig> {
        let cfg = UNetConfig {
            in_channels: self.get("in_channels")?,
            out_channels: self.get("out_channels")?,
            base_width: self.get("base_width")?,
            depth: self.get("depth")?,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train(&self, checkpoint_path: Option<PathBuf>) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            learning_rate: self.get("learning_rate")?,
            adam: AdamConfig {
                beta1: self.get("beta1")?,
                beta2: self.get("beta2")?,
                eps: self.get("adam_eps")?,
            },
            scheduler_factor: self.get("scheduler_factor")?,
            scheduler_patience: self.get("scheduler_patience")?,
            checkpoint_path,
            seed: self.get("seed")?,
            shuffle: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One `key=value (source)` line per setting, in key order.
    pub fn describe(&self) -> Vec<String> {
        self.settings
            .iter()
            .map(|(k, s)| format!("{k}={} ({})", s.value, s.source))
            .collect()
    }
}
