//! Flat `key = value` configuration.
//!
//! ```text
//! # comments start with '#'
//! depth = 10
//! max_lv = 5
//! extension = true
//! single_model = false
//! seed = 42
//! model.8 = models/b8.vxdw
//! model.16 = models/b16.vxdw
//! augment.rotate = true
//! augment.subsample = true
//! augment.angles = 45
//! augment.rates = 0.7, 0.4
//! ```
//!
//! Relative model paths are resolved against the config file's directory.
//! Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use voxelcodec::geometry::AugmentParams;
use voxelcodec::model::MODEL_SIZES;
use voxelcodec::partition::{CodecOptions, MAX_LEVEL};

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    pub depth: Option<u32>,
    pub max_lv: u8,
    pub extension: bool,
    pub single_model: bool,
    pub models: BTreeMap<usize, PathBuf>,
    pub seed: u64,
    pub rotate: bool,
    pub subsample: bool,
    pub angles: Vec<f64>,
    pub rates: Vec<f64>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        let aug = AugmentParams::default();
        CodecConfig {
            depth: None,
            max_lv: MAX_LEVEL,
            extension: true,
            single_model: false,
            models: BTreeMap::new(),
            seed: 0,
            rotate: true,
            subsample: true,
            angles: aug.angles_deg,
            rates: aug.sampling_rates,
        }
    }
}

pub fn parse_bool(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => bail!("expected a boolean, got '{v}'"),
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("bad number '{s}'")))
        .collect()
}

/// Parses `SIZE=PATH`.
pub fn parse_model_arg(s: &str) -> Result<(usize, PathBuf)> {
    let (size, path) = s
        .split_once('=')
        .with_context(|| format!("expected SIZE=PATH, got '{s}'"))?;
    Ok((parse_model_size(size.trim())?, PathBuf::from(path.trim())))
}

fn parse_model_size(s: &str) -> Result<usize> {
    let size: usize = s.parse().with_context(|| format!("bad model size '{s}'"))?;
    if !MODEL_SIZES.contains(&size) {
        bail!("model size {size} is not one of {MODEL_SIZES:?}");
    }
    Ok(size)
}

impl CodecConfig {
    /// Applies the `key = value` lines of `text`.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", n + 1))?;
            self.set(key.trim(), value.trim(), base)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut c = CodecConfig::default();
        c.apply_text(&text, path.parent().unwrap_or(Path::new(".")))?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        match key {
            "depth" => self.depth = Some(value.parse().context("bad depth")?),
            "max_lv" => self.max_lv = value.parse().context("bad max_lv")?,
            "extension" => self.extension = parse_bool(value)?,
            "single_model" => self.single_model = parse_bool(value)?,
            "seed" => self.seed = value.parse().context("bad seed")?,
            "augment.rotate" => self.rotate = parse_bool(value)?,
            "augment.subsample" => self.subsample = parse_bool(value)?,
            "augment.angles" => self.angles = parse_list(value)?,
            "augment.rates" => self.rates = parse_list(value)?,
            _ => match key.strip_prefix("model.") {
                Some(size) => {
                    self.models.insert(parse_model_size(size)?, base.join(value));
                }
                None => bail!("unknown key '{key}'"),
            },
        }
        Ok(())
    }

    pub fn options(&self) -> CodecOptions {
        CodecOptions {
            max_lv: self.max_lv,
            extension: self.extension,
            single_model: self.single_model,
        }
    }

    pub fn augment_params(&self) -> AugmentParams {
        AugmentParams {
            angles_deg: if self.rotate { self.angles.clone() } else { Vec::new() },
            sampling_rates: if self.subsample { self.rates.clone() } else { Vec::new() },
            seed: self.seed,
        }
    }
}
