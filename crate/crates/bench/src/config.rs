use std::path::Path;

use serde::{Deserialize, Serialize};

use cmppi::pipeline::PlannerConfig;

use crate::envgen::EnvGenParams;
use crate::BenchError;

/// Every tunable of a benchmark run. Missing keys take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub planner: PlannerConfig,
    pub envgen: EnvGenParams,
    /// Dead-end fixtures appended to the random suite.
    pub dead_end_fixtures: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { planner: PlannerConfig::default(), envgen: EnvGenParams::default(), dead_end_fixtures: 2 }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.planner.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.envgen.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: BenchConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
