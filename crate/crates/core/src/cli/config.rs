//! Run configuration: TOML on disk, canonical JSON for hashing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::measures::ResamplePolicy;
use crate::model::{presets, validate_model, ModelConfig, ModelSpec, ProbePlan};
use crate::pathsim::TimeGrid;
use crate::verify::{
    DualityBudget, JointLawBudget, MartingaleBudget, PathwiseBudget, DEFAULT_SE_MULTIPLIER,
};
use crate::zakai::FilterConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Defaults to the model horizon.
    pub horizon: Option<f64>,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            horizon: None,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub particles: usize,
    pub resample: ResamplePolicy,
    /// Evenly spaced nodes whose particle clouds are written out.
    pub stored_checkpoints: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            particles: 1000,
            resample: ResamplePolicy::default(),
            stored_checkpoints: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub duality: DualityBudget,
    pub martingale: MartingaleBudget,
    pub pathwise: PathwiseBudget,
    pub jointlaw: JointLawBudget,
}

/// Everything that determines the bytes a command writes, apart from the output
/// location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Named preset; ignored for the model when `model` is present.
    pub scenario: Option<String>,
    pub model: Option<ModelConfig>,
    pub seed: u64,
    pub grid: GridConfig,
    pub filter: FilterSettings,
    /// Multiplier on the standard error used by every statistical comparison.
    pub se_multiplier: f64,
    pub budgets: Budgets,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: None,
            model: None,
            seed: 0,
            grid: GridConfig::default(),
            filter: FilterSettings::default(),
            se_multiplier: DEFAULT_SE_MULTIPLIER,
            budgets: Budgets::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fills `model` from `scenario` and pushes `se_multiplier` into the budgets.
    pub fn resolve(mut self) -> Result<Self> {
        if self.model.is_none() {
            let name = self.scenario.as_deref().ok_or_else(|| {
                Error::Config("either `scenario` or a [model] table is required".into())
            })?;
            self.model = Some(presets::preset(name)?);
        }
        let k = self.se_multiplier;
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Config(format!("se_multiplier {k} must be > 0")));
        }
        self.budgets.duality.se_multiplier = k;
        self.budgets.martingale.se_multiplier = k;
        if self.grid.steps == 0 {
            return Err(Error::Config("grid.steps must be positive".into()));
        }
        if self.filter.particles == 0 {
            return Err(Error::Config("filter.particles must be positive".into()));
        }
        Ok(self)
    }

    fn model_config(&self) -> Result<&ModelConfig> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("configuration is not resolved".into()))
    }

    /// Builds the model, applying the grid horizon, and rejects models that fail the
    /// probe-based assumption checks.
    pub fn spec(&self) -> Result<ModelSpec> {
        let mut spec = self.model_config()?.build()?;
        if let Some(h) = self.grid.horizon {
            spec = spec.with_horizon(h);
        }
        let report = validate_model(&spec, &ProbePlan::default_for(&spec))?;
        if !report.passed() {
            let failed: Vec<&str> = report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            return Err(Error::InvalidModel(format!(
                "assumption checks failed: {}",
                failed.join(", ")
            )));
        }
        Ok(spec)
    }

    pub fn grid(&self, spec: &ModelSpec) -> Result<TimeGrid> {
        TimeGrid::new(spec.horizon(), self.grid.steps)
    }

    pub fn filter_config(&self, grid: TimeGrid, seed: u64) -> FilterConfig {
        FilterConfig::new(seed)
            .with_resample(self.filter.resample)
            .with_store(&grid.checkpoints(self.filter.stored_checkpoints))
    }

    /// Hex SHA-256 of the canonical JSON form. Once the model is filled in the scenario
    /// name is redundant and left out.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        if canonical.model.is_some() {
            canonical.scenario = None;
        }
        let json = serde_json::to_string(&canonical)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}
