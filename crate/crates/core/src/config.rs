//! Run configuration read from a TOML document. Every section and field is
//! optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::csi::PretrainConfig;
use crate::data::{DatasetConfig, SplitSpec};
use crate::error::{Error, Result};
use crate::model::NdfConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Seconds of recording.
    pub duration: f64,
    /// Window step in seconds.
    pub step: f64,
    /// Seed of the fixed sensor geometry, kept apart from the run seed.
    pub feature_seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { duration: 8890.0, step: 5.0, feature_seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub budget: usize,
    pub epochs: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { budget: 100, epochs: 125 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeRunConfig {
    /// Seconds of raw CSI to simulate for pretraining.
    pub duration: f64,
    pub pretrain: PretrainConfig,
}

impl Default for CaeRunConfig {
    fn default() -> Self {
        CaeRunConfig { duration: 120.0, pretrain: PretrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportConfig {
    /// Half side of the square regions placed along the track.
    pub region_half: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig { region_half: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub simulate: SimulateConfig,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub model: NdfConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub search: SearchConfig,
    pub cae: CaeRunConfig,
    pub export: ExportConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Use `seed` everywhere a run seed is consumed and tie the measurement
    /// widths of the models to the dataset.
    pub fn resolve(mut self, seed: Option<u64>) -> RunConfig {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.split.seed = self.seed;
        self.train.seed = self.seed;
        self.split.train_step = self.simulate.step;
        self.split.test_step = self.simulate.step;
        self.model.m_b = self.dataset.m_b;
        self.model.m_c = self.dataset.m_c;
        self.baseline.m_b = self.dataset.m_b;
        self.baseline.m_c = self.dataset.m_c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.split.validate()?;
        self.train.validate()?;
        self.baseline.validate()?;
        if !(self.simulate.duration > 0.0 && self.simulate.step > 0.0) {
            return Err(Error::Config("simulate duration and step must be positive".into()));
        }
        if self.search.budget == 0 || self.search.epochs == 0 {
            return Err(Error::Config("search budget and epochs must be positive".into()));
        }
        Ok(())
    }
}
