//! Whole-pipeline run configuration: a JSON document overlaid on a preset.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::probe::{FinetuneConfig, ProbeConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Single-CPU scale.
    #[default]
    Desk,
    /// Published model size and schedule.
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (encoder, train) = match preset {
            Preset::Desk => (EncoderConfig::desk(), TrainConfig::desk()),
            Preset::Paper => (EncoderConfig::paper(), TrainConfig::paper()),
        };
        Self {
            preset,
            encoder,
            train,
            probe: ProbeConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }

    /// Overlays a JSON document on the preset it names (desk when absent).
    /// Every key must exist in the schema.
    pub fn from_json(text: &str) -> Result<Self> {
        let overlay: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &overlay else {
            return Err(Error::Config("run config must be a JSON object".into()));
        };
        let preset = match map.get("preset") {
            None => Preset::Desk,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("preset: {e}")))?,
        };
        let mut base = serde_json::to_value(Self::preset(preset))?;
        merge(&mut base, &overlay);
        let cfg: Self =
            serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        if self.probe.epochs == 0 || self.probe.batch_size == 0 || !(self.probe.lr > 0.0) {
            return Err(Error::Config("probe epochs, batch_size and lr must be > 0".into()));
        }
        if !(self.probe.test_fraction > 0.0 && self.probe.test_fraction < 1.0) {
            return Err(Error::Config("probe test_fraction must lie in (0, 1)".into()));
        }
        if self.finetune.batch_size == 0 || !(self.finetune.lr > 0.0) {
            return Err(Error::Config("finetune batch_size and lr must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

/// Recursively overwrites `base` with `overlay`; keys absent from `base`
/// are inserted so that deserialization can reject them.
fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
