//! Training run configuration: a TOML file with `[dataset]`, `[model]`,
//! `[schedule]`, and `[train]` sections. Every field has a default except
//! `dataset.path`; the CLI can override any field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::denoiser::{DenoiserConfig, TrainConfig};
use crate::error::{Error, Result};

/// `[dataset]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// JSON-lines file with the training series.
    pub path: Option<PathBuf>,
    /// Context length; defaults by frequency when absent.
    pub context_length: Option<usize>,
    /// Horizon; defaults by frequency when absent.
    pub prediction_length: Option<usize>,
    /// Lag offsets appended as channels.
    pub lags: Vec<usize>,
    /// Exclude the final window of every series from training.
    pub holdout_last_window: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: None,
            context_length: None,
            prediction_length: None,
            lags: Vec::new(),
            holdout_last_window: false,
        }
    }
}

/// `[model]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Residual blocks.
    pub residual_layers: usize,
    /// Hidden width.
    pub channels: usize,
    /// Step-embedding dimension.
    pub time_emb_dim: usize,
    /// Add the input to the output.
    pub skip_input_to_output: bool,
    /// Parameter initialization seed.
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            residual_layers: 3,
            channels: 64,
            time_emb_dim: 128,
            skip_input_to_output: false,
            init_seed: 0,
        }
    }
}

/// `[schedule]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Diffusion steps.
    pub steps: usize,
    /// First noise variance.
    pub beta_first: f64,
    /// Last noise variance.
    pub beta_last: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_first: 1e-4,
            beta_last: 0.1,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Where the data comes from and how it is windowed.
    pub dataset: DatasetSection,
    /// Network architecture.
    pub model: ModelSection,
    /// Noise schedule.
    pub schedule: ScheduleSection,
    /// Optimization settings.
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parse a TOML config file.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Load the dataset named by `dataset.path`, applying length overrides.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self.dataset.path.as_ref().ok_or_else(|| {
            Error::Config("missing field `dataset.path` in the run configuration".into())
        })?;
        let mut ds = Dataset::from_jsonl(path)?;
        if let Some(ctx) = self.dataset.context_length {
            ds.context_length = ctx;
        }
        if let Some(pred) = self.dataset.prediction_length {
            ds.prediction_length = pred;
        }
        Ok(ds)
    }

    /// The denoiser architecture for a given window length.
    pub fn denoiser_config(&self, window_len: usize) -> DenoiserConfig {
        DenoiserConfig {
            window_len,
            input_channels: 1 + self.dataset.lags.len(),
            residual_layers: self.model.residual_layers,
            channels: self.model.channels,
            time_emb_dim: self.model.time_emb_dim,
            skip_input_to_output: self.model.skip_input_to_output,
        }
    }

    /// Echo the resolved configuration for provenance lines.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is serializable")
    }
}
