//! Pipeline configuration file: one TOML document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::ToyConfig;
use crate::error::{Error, Result};
use crate::eval::SceneSpec;
use crate::prompting::{FRAME_SEED_TEXT, VIDEO_SEED_TEXT};
use crate::rollout::RolloutConfig;
use crate::steering::TrainConfig;
use crate::tracklets::SelectionConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Dump,
    Plugin,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub toy: ToyConfig,
    /// Directory of attention dumps for the `dump` backend.
    pub dump_dir: Option<PathBuf>,
    /// Registered name of an external backend for the `plugin` kind.
    pub plugin: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Frame-branch checkpoint; absent means the raw backend.
    pub frame: Option<PathBuf>,
    pub video: Option<PathBuf>,
    pub frame_seed_text: String,
    pub video_seed_text: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            frame: None,
            video: None,
            frame_seed_text: FRAME_SEED_TEXT.to_string(),
            video_seed_text: VIDEO_SEED_TEXT.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Run the reasoning step and add its attributes to the query.
    pub use_cot: bool,
    pub backend: BackendConfig,
    pub rollout: RolloutConfig,
    pub selection: SelectionConfig,
    pub train: TrainConfig,
    pub prompts: PromptConfig,
    pub scenes: SceneSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            use_cot: true,
            backend: BackendConfig::default(),
            rollout: RolloutConfig::default(),
            selection: SelectionConfig::default(),
            train: TrainConfig::default(),
            prompts: PromptConfig::default(),
            scenes: SceneSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.rollout.validate().map_err(wrap)?;
        self.selection.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        match self.backend.kind {
            BackendKind::Dump if self.backend.dump_dir.is_none() => {
                Err(Error::Config("backend.kind = \"dump\" needs backend.dump_dir".into()))
            }
            BackendKind::Plugin if self.backend.plugin.is_none() => {
                Err(Error::Config("backend.kind = \"plugin\" needs backend.plugin".into()))
            }
            _ => Ok(()),
        }
    }
}
