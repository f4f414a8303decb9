//! Experiment configuration: UTF-8 JSON with a fixed schema version.
//! Unknown keys are errors; referenced paths must exist at load time.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::data::{AugmentParams, PhantomParams};
use crate::models::{LossConfig, ModelSpec};
use crate::{Error, Result};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Phantom { params: PhantomParams, count: usize },
    Manifest { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub loss: LossConfig,
    pub data: DataSource,
    /// `None` uses the paper-default augmentation scaled to the data edge.
    #[serde(default)]
    pub augment: Option<AugmentParams>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// `None` falls back to the model spec's epoch count.
    #[serde(default)]
    pub epochs: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub output_dir: String,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_eval_every() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate(path.parent())?;
        Ok(cfg)
    }

    pub fn validate(&self, base_dir: Option<&Path>) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema {} (this build reads schema {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        self.model.validate()?;
        self.loss.validate()?;
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {}", self.train_fraction)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.resolved_epochs() == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        match &self.data {
            DataSource::Phantom { params, count } => {
                params.validate()?;
                if *count < 2 {
                    return Err(Error::Config(format!("phantom count {count} (need >= 2)")));
                }
            }
            DataSource::Manifest { path } => {
                let p = resolve(base_dir, path);
                if !p.exists() {
                    return Err(Error::Config(format!("manifest {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn resolved_epochs(&self) -> usize {
        self.epochs.unwrap_or(self.model.epochs)
    }

    /// The slice edge the data will carry.
    pub fn data_edge(&self) -> usize {
        match &self.data {
            DataSource::Phantom { params, .. } => params.edge,
            DataSource::Manifest { .. } => self.model.input_edge,
        }
    }

    pub fn resolved_augment(&self) -> AugmentParams {
        self.augment.clone().unwrap_or_else(|| AugmentParams::defaults_for_edge(self.data_edge()))
    }
}

pub(crate) fn resolve(base: Option<&Path>, path: &str) -> std::path::PathBuf {
    let p = Path::new(path);
    if p.is_absolute() || base.is_none() {
        p.to_path_buf()
    } else {
        base.unwrap().join(p)
    }
}

/// SHA-256 of the canonical JSON serialization, as lowercase hex.
pub fn config_digest(config: &ExperimentConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            model: ModelSpec::default_for(Architecture::ResnetTiny),
            loss: LossConfig::default(),
            data: DataSource::Phantom { params: PhantomParams::default(), count: 10 },
            augment: None,
            train_fraction: 0.8,
            epochs: Some(2),
            seed: 7,
            eval_every: 1,
            output_dir: "out".into(),
        }
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = sample();
        let mut b = sample();
        assert_eq!(config_digest(&a), config_digest(&a));
        b.seed = 8;
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(sample()).unwrap();
        v.as_object_mut().unwrap().insert("mystery".into(), 1.into());
        let err = serde_json::from_value::<ExperimentConfig>(v);
        assert!(err.is_err(), "unknown keys must fail");
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let mut c = sample();
        c.schema = 2;
        assert!(matches!(c.validate(None), Err(Error::Config(_))));
    }

    #[test]
    fn missing_manifest_is_rejected_at_load() {
        let mut c = sample();
        c.data = DataSource::Manifest { path: "/definitely/not/here.csv".into() };
        assert!(matches!(c.validate(None), Err(Error::Config(_))));
    }
}
