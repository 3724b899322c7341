//! Run configuration shared by the CLI and the HTTP service, read from TOML
//! or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::ProtocolThresholds;
use crate::classifier::{ModelKind, ModelSpec};
use crate::enhance::EnhancementParams;
use crate::features::FeatureConfig;
use crate::postprocess::PostprocessParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {detail}")]
    Parse { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub train_ratio: f64,
    pub folds: usize,
    /// Replaces the default grid of `model` when present.
    pub grid: Option<Vec<ModelSpec>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Forest,
            train_ratio: 0.7,
            folds: 5,
            grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CuratorConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub enhance: EnhancementParams,
    pub postprocess: PostprocessParams,
    pub agreement: ProtocolThresholds,
    pub serve: ServeConfig,
}

impl Default for CuratorConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            jobs: None,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            enhance: EnhancementParams::default(),
            postprocess: PostprocessParams::default(),
            agreement: ProtocolThresholds::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl CuratorConfig {
    /// `.json` files parse as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: shown.clone(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|detail| ConfigError::Parse { path: shown, detail })
    }
}
