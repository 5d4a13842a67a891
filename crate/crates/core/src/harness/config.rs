//! Declarative run configuration, read from TOML.
//!
//! ```toml
//! [scenario]
//! n_iv = 30
//! d_x = 50
//! d_id = 15
//!
//! [selection]
//! t_max = 6
//! max_per_round = 3
//! cost = "log"
//!
//! [harness]
//! n_runs = 250
//! strategies = ["sis", "random", "ideal"]
//! norm_provider = "oracle_noisy:0.1"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::NormSource;
use crate::selection::{SelectionConfig, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub n_iv: usize,
    pub d_x: usize,
    pub d_id: usize,
    /// Gaussian noise added to the effect rows before computing similarities.
    pub similarity_noise_sd: f64,
    /// Switch the confounder off so every estimate is exact.
    pub noiseless: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_iv: 30,
            d_x: 50,
            d_id: 15,
            similarity_noise_sd: 1.0,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessParams {
    pub n_runs: usize,
    pub strategies: Vec<Strategy>,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub norm_provider: NormSource,
    /// 0 means one worker per core.
    pub workers: usize,
}

impl Default for HarnessParams {
    fn default() -> Self {
        Self {
            n_runs: 250,
            strategies: vec![Strategy::Sis, Strategy::Random, Strategy::Ideal],
            base_seed: 0,
            output_dir: PathBuf::from("out"),
            norm_provider: NormSource::Oracle,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioParams,
    pub selection: SelectionConfig,
    pub harness: HarnessParams,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.d_id < 2 || s.d_id > s.n_iv.min(s.d_x) {
            return Err(Error::Config(format!(
                "need 2 <= d_id <= min(n_iv, d_x), got d_id = {}, n_iv = {}, d_x = {}",
                s.d_id, s.n_iv, s.d_x
            )));
        }
        if !(s.similarity_noise_sd >= 0.0 && s.similarity_noise_sd.is_finite()) {
            return Err(Error::Config(format!(
                "similarity_noise_sd = {}",
                s.similarity_noise_sd
            )));
        }
        if self.harness.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.harness.strategies.is_empty() {
            return Err(Error::Config("strategies must not be empty".into()));
        }
        self.selection.validate()
    }
}
