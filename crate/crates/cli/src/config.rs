//! Run configuration loaded from `--config`.

use std::path::Path;

use neotraj::neural::TrainConfig;
use neotraj::world::DEFAULT_RESOLUTION;
use neotraj::{EpisodeConfig, InitConfig, PlannerSettings, ReplanConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, CliError};

/// Every tunable of a run. Missing keys take their defaults; unknown keys
/// are an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Flat-output dimension (D). Only 2 is supported.
    pub dim: usize,
    /// Smoothness order (S). Only 3 is supported.
    pub smoothness: usize,
    /// Grid resolution (m).
    pub resolution: f64,
    pub replan: ReplanConfig,
    pub planner: PlannerSettings,
    pub init: InitConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            smoothness: 3,
            resolution: DEFAULT_RESOLUTION,
            replan: ReplanConfig::default(),
            planner: PlannerSettings::default(),
            init: InitConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&read_file(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.dim != 2 {
            return bad(format!("dim {} is not supported (only 2)", self.dim));
        }
        if self.smoothness != 3 {
            return bad(format!("smoothness {} is not supported (only 3)", self.smoothness));
        }
        if !(self.resolution > 0.0 && self.resolution <= 1.0) {
            return bad("resolution must lie in (0, 1] m".into());
        }
        if self.init.pieces < 1 {
            return bad("init.pieces must be at least 1".into());
        }
        let t = &self.planner.time;
        if !(t.t_min > 0.0 && t.t_max > t.t_min) {
            return bad("planner.time needs 0 < t_min < t_max".into());
        }
        let p = &self.planner.penalty;
        if !(p.v_max > 0.0 && p.a_max > 0.0 && p.d_safe >= 0.0 && p.samples_per_piece > 0) {
            return bad("planner.penalty values must be positive".into());
        }
        self.replan.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.planner
            .solver
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            replan: self.replan,
            planner: self.planner,
            init: self.init,
        }
    }
}
