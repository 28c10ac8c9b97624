//! Run configuration: defaults, an optional TOML file, and `key=value`
//! overrides, merged in that order of increasing precedence.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analyze::TsneConfig;
use crate::bench::{SyntheticSpec, TOY_LINEAR};
use crate::manifest::DatasetKind;
use crate::models::{DetectorConfig, FeatureExtractorConfig, SegmenterConfig, StubSegmenterMode};
use crate::pipeline::{CompositeConfig, PipelineConfig};
use crate::qa::QaThresholds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("override `{0}` must look like key.path=value")]
    Override(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Hex SHA-256 of the value's JSON serialization.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// What `export` does with records a reviewer rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectedPolicy {
    #[default]
    Drop,
    KeepSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportConfig {
    pub rejected: RejectedPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub backbones: Vec<String>,
    pub seed: u64,
    pub hyperparams: std::collections::BTreeMap<String, String>,
    pub synthetic: SyntheticSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            backbones: vec![TOY_LINEAR.into()],
            seed: 0,
            hyperparams: Default::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workers: usize,
    pub detector: DetectorConfig,
    pub segmenter: SegmenterConfig,
    pub composite: CompositeConfig,
    pub thresholds: QaThresholds,
    pub extractor: FeatureExtractorConfig,
    pub bench: BenchConfig,
    pub tsne: TsneConfig,
    pub export: ExportConfig,
}

impl RunConfig {
    /// Stub backends and the dataset kind's default vocabulary.
    pub fn for_kind(kind: DatasetKind) -> Self {
        Self {
            workers: 1,
            detector: DetectorConfig::stub(kind),
            segmenter: SegmenterConfig::stub(StubSegmenterMode::Box),
            composite: CompositeConfig::default(),
            thresholds: QaThresholds::default(),
            extractor: FeatureExtractorConfig::stub(64),
            bench: BenchConfig::default(),
            tsne: TsneConfig::default(),
            export: ExportConfig::default(),
        }
    }

    /// `defaults`, overlaid with the TOML file (if any), then `overrides`.
    pub fn resolve(defaults: RunConfig, file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(&defaults).expect("configuration serializes");
        if let Some(path) = file {
            let file_err = |message: String| ConfigError::File {
                path: path.display().to_string(),
                message,
            };
            let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
            let parsed: toml::Table = toml::from_str(&text).map_err(|e| file_err(e.to_string()))?;
            let parsed = serde_json::to_value(parsed).map_err(|e| file_err(e.to_string()))?;
            merge(&mut value, parsed, "")?;
        }
        for raw in overrides {
            let (key, val) = raw.split_once('=').ok_or_else(|| ConfigError::Override(raw.clone()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Override(raw.clone()));
            }
            let mut patch = parse_scalar(val.trim());
            for part in key.rsplit('.') {
                patch = Value::Object([(part.to_string(), patch)].into_iter().collect());
            }
            merge(&mut value, patch, "")?;
        }
        let config: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be >= 1".into()));
        }
        self.detector.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.composite.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.thresholds.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            detector: self.detector.clone(),
            segmenter: self.segmenter.clone(),
            composite: self.composite,
            thresholds: self.thresholds.clone(),
        }
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }
}

/// TOML scalar syntax (`0.5`, `true`, `"x"`, `["a", "b"]`), falling back to
/// a bare string.
fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Deep-merges `patch` into `base`. Keys must already exist in `base`,
/// except under objects that are empty by default (free-form maps).
fn merge(base: &mut Value, patch: Value, prefix: &str) -> Result<(), ConfigError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let free_form = b.is_empty();
            for (k, v) in p {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None if free_form => {
                        let v = match v {
                            Value::Number(n) => Value::String(n.to_string()),
                            Value::Bool(x) => Value::String(x.to_string()),
                            other => other,
                        };
                        b.insert(k, v);
                    }
                    None => return Err(ConfigError::UnknownKey(path)),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}
