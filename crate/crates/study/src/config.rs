//! Run configuration shared by the CLI subcommands, loaded from TOML or JSON.

use std::path::Path;

use panscreen_core::cascade::PipelineConfig;
use panscreen_core::phantom::CohortConfig;
use panscreen_core::stats::StatConfig;
use serde::{Deserialize, Serialize};

use crate::reader::PositiveCall;
use crate::StudyError;

/// Size of the in-memory cohort used to fit the stage-3 classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub n_pdac: usize,
    pub n_nonpdac: usize,
    pub n_normal: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { n_pdac: 8, n_nonpdac: 6, n_normal: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub addr: String,
    pub session: u8,
    /// Display window (level - width/2, level + width/2) for slice PNGs.
    pub window: [f32; 2],
    pub order_seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".into(), session: 1, window: [-20.0, 230.0], order_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick.
    pub threads: usize,
    pub cohort: CohortConfig,
    pub pipeline: PipelineConfig,
    pub training: TrainingConfig,
    pub stats: StatConfig,
    pub positive_call: PositiveCall,
    pub serve: ServeConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            cohort: CohortConfig::default(),
            pipeline: PipelineConfig::default(),
            training: TrainingConfig::default(),
            stats: StatConfig::default(),
            positive_call: PositiveCall::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = std::fs::read_to_string(path).map_err(|e| StudyError::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| StudyError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| StudyError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        self.cohort.validate()?;
        self.pipeline.validate()?;
        self.stats.validate()?;
        if !matches!(self.serve.session, 1 | 2) {
            return Err(StudyError::Config(format!("serve.session must be 1 or 2, got {}", self.serve.session)));
        }
        if self.serve.window[0] >= self.serve.window[1] {
            return Err(StudyError::Config("serve.window must be increasing".into()));
        }
        Ok(())
    }
}
