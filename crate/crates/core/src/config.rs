//! Run configuration shared by every command-line subcommand.
//!
//! ```toml
//! seed = 7                     # optional; overrides cohort.seed and distill.seed
//!
//! [model]
//! path = "reference.toml"      # relative to this file, or give the model inline
//!
//! [cohort]                     # see CohortConfig
//! subjects = 10
//!
//! [distill]                    # see DistillConfig
//! epochs_stage2 = 60
//!
//! [split]
//! train = 0.6
//! val = 0.2
//!
//! [grid]
//! lr = [1e-4, 1e-3]
//! batch_size = [16, 32]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CohortConfig, SplitFractions};
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::trainer::{DistillConfig, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path { path: PathBuf },
    Inline(ModelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub model: ModelSource,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub grid: Grid,
}

/// A run config with the model resolved and seeds applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub model: ModelConfig,
    pub cohort: CohortConfig,
    pub distill: DistillConfig,
    pub split: SplitFractions,
    pub grid: Grid,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Parses and resolves a config file; a model path is taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<ResolvedRun> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)?.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(self, base_dir: &Path) -> Result<ResolvedRun> {
        let model = match self.model {
            ModelSource::Inline(m) => m,
            ModelSource::Path { path } => ModelConfig::load(base_dir.join(path))?,
        };
        let mut run = ResolvedRun { model, cohort: self.cohort, distill: self.distill, split: self.split, grid: self.grid };
        if let Some(seed) = self.seed {
            run.set_seed(seed);
        }
        run.validate()?;
        Ok(run)
    }
}

impl ResolvedRun {
    pub fn set_seed(&mut self, seed: u64) {
        self.cohort.seed = seed;
        self.distill.seed = seed;
    }

    pub fn window_len(&self) -> usize {
        (self.cohort.timeline.window_s * self.cohort.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.model.plan()?;
        self.distill.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.cohort.timeline.validate()?;
        if self.model.input_channels != self.cohort.channels || self.model.input_len != self.window_len() {
            return Err(Error::Config(format!(
                "model {:?} expects {} x {} windows but the cohort yields {} x {}",
                self.model.name,
                self.model.input_channels,
                self.model.input_len,
                self.cohort.channels,
                self.window_len()
            )));
        }
        if self.model.classes != 2 {
            return Err(Error::Config(format!("model {:?} must have 2 classes", self.model.name)));
        }
        Ok(())
    }
}
