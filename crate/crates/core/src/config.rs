//! Experiment configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BmsError, Result};
use crate::evaluate::Metric;
use crate::trainer::TrainConfig;

/// Divisor applied to `I`, `M` and the buffer size by [`ExperimentConfig::desk_scale`].
pub const DESK_SCALE_DIVISOR: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    /// Outer steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub metrics: Vec<Metric>,
    /// Model samples drawn for evaluation after training.
    pub eval_samples: usize,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "bms".into(),
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 100,
            metrics: vec![Metric::ModeTvd, Metric::SlicedTvd, Metric::W2],
            eval_samples: 2000,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| BmsError::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| BmsError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            BmsError::Config(m) => BmsError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Divides `I`, `M` and the buffer size by ten, keeping each at least one.
    pub fn desk_scale(&mut self) {
        let t = &mut self.train;
        t.outer_steps = (t.outer_steps / DESK_SCALE_DIVISOR).max(1);
        t.inner_steps = (t.inner_steps / DESK_SCALE_DIVISOR).max(1);
        t.buffer_size = (t.buffer_size / DESK_SCALE_DIVISOR as usize).max(1);
        self.checkpoint_every = self.checkpoint_every / DESK_SCALE_DIVISOR;
    }
}
