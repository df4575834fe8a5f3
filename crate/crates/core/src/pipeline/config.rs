//! Run configuration file (TOML).
//!
//! ```toml
//! [episode]              # EpisodeConfig fields; all optional
//! max_steps = 12
//! pixel_selection = "bottom_center"   # | "median_depth" | "direct_point"
//! backtrack = "any"                   # | "last_only" | "disabled"
//! history = "visual_and_actions"
//!
//! [episode.control]
//! forward_step = 0.25
//!
//! [camera]               # pinhole intrinsics of the simulated camera
//! width = 640
//!
//! [planner]              # same keys for [grounder]
//! kind = "oracle"        # | "adversarial_oracle" | "http"
//! url = "https://api.example.com/v1/chat/completions"
//! model = "some-model"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [prices.planner]       # USD per million tokens
//! input_per_mtok = 2.5
//! output_per_mtok = 10.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CameraIntrinsics;
use crate::mllm::{HttpClientConfig, PriceTable};
use crate::sim::RenderConfig;

use super::EpisodeConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Oracle,
    AdversarialOracle,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientSection {
    pub kind: ClientKind,
    #[serde(flatten)]
    pub http: HttpClientConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub episode: EpisodeConfig,
    pub camera: CameraIntrinsics,
    pub render: RenderConfig,
    pub planner: ClientSection,
    pub grounder: ClientSection,
    pub prices: PriceTable,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.episode.validate().map_err(ConfigError::Invalid)?;
        self.camera
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let oracle = |k: ClientKind| k != ClientKind::Http;
        if oracle(self.planner.kind) != oracle(self.grounder.kind) {
            return Err(ConfigError::Invalid(
                "planner and grounder must both be oracles or both be http".into(),
            ));
        }
        if self.planner.kind != ClientKind::Http && self.planner.kind != self.grounder.kind {
            return Err(ConfigError::Invalid(
                "planner and grounder oracles must be of the same kind".into(),
            ));
        }
        Ok(())
    }
}
