//! Run configuration: one JSON file unioning every module's section,
//! with dotted-path overrides and a single seed funneling all
//! randomness.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::forest::TrainConfig;
use crate::synthgen::SynthConfig;
use crate::windowing::DatasetConfig;

/// Preprocessing blur applied before windowing everywhere.
pub const DEFAULT_BLUR_SIGMA: f64 = 0.8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; propagated into every section on `resolve`.
    pub seed: u64,
    pub blur_sigma: f64,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub augment: AugmentConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            augment: AugmentConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Pushes the master seed into every section and re-validates.
    pub fn resolve(mut self) -> Result<Self> {
        self.dataset.seed = self.seed;
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blur_sigma < 0.0 {
            return Err(Error::Argument("blur_sigma must be non-negative".into()));
        }
        self.dataset.validate()?;
        self.train.validate()?;
        self.ensemble.validate()?;
        self.augment.validate()?;
        self.synth.validate()
    }

    /// Loads a JSON config, applies `section.key=value` overrides, then
    /// resolves. A missing path with no overrides yields the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Format {
                    path: p.to_path_buf(),
                    reason: e.to_string(),
                })?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Argument(format!("invalid config: {e}")))?;
        cfg.resolve()
    }
}

/// Applies one `dotted.path=json-or-string` override in place.
fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Argument(format!("override '{item}' is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Argument(format!("override key '{path}' is malformed")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| Error::Argument(format!("'{path}' does not address an object")))?
            .entry(key.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    // bare words fall back to strings so flags like GFW need no quoting
    let parsed = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    node.as_object_mut()
        .ok_or_else(|| Error::Argument(format!("'{path}' does not address an object")))?
        .insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
