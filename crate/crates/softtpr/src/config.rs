use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use softtpr_core::dataset::FactorSpec;
use softtpr_core::metrics::{MetricsConfig, MIN_SAMPLES};
use softtpr_core::model::{ModelConfig, TrainConfig};
use softtpr_core::probe::ProbeConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub values_per_factor: Vec<usize>,
    pub obs_dim: usize,
    pub render_seed: u64,
    /// Rows written by `generate-data`; 0 writes the full factor grid.
    pub samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let spec = FactorSpec::default();
        Self {
            values_per_factor: spec.values_per_factor,
            obs_dim: spec.obs_dim,
            render_seed: spec.render_seed,
            samples: 2000,
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> FactorSpec {
        FactorSpec {
            values_per_factor: self.values_per_factor.clone(),
            obs_dim: self.obs_dim,
            render_seed: self.render_seed,
        }
    }
}

/// Everything a run needs. `seed` is the only seed: model initialization,
/// batch sampling, metrics and probes all derive from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.data.spec();
        spec.validate()?;
        self.model.validate()?;
        if self.model.n_r != spec.n_r() {
            return Err(CliError::Config(format!(
                "model.n_r = {} but the data has {} factors",
                self.model.n_r,
                spec.n_r()
            )));
        }
        if self.train.batch_size == 0 {
            return Err(CliError::Config("train.batch_size must be positive".into()));
        }
        if self.metrics.samples < MIN_SAMPLES
            || self.metrics.factorvae_batches < 2
            || self.metrics.factorvae_batch_size < 2
            || self.metrics.betavae_points < 2
            || self.metrics.betavae_pairs_per_point == 0
        {
            return Err(CliError::Config("metrics sample sizes are too small".into()));
        }
        self.probe.validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn metrics_config(&self) -> MetricsConfig {
        MetricsConfig {
            seed: self.seed,
            ..self.metrics.clone()
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            seed: self.seed,
            ..self.probe.clone()
        }
    }
}
