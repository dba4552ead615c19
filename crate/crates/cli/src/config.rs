use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hystop::data::AugmentConfig;
use hystop::material::{GRID_FREQS, GRID_PEAKS, SAMPLES_PER_PERIOD};
use hystop::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Every setting of every command. Missing fields in a config file take the
/// defaults below; command-line flags override both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generate: GenerateSection,
    pub augment: AugmentSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    /// Material parameter JSON; built-in GO steel when absent.
    pub params: Option<PathBuf>,
    pub freqs: Vec<f64>,
    pub peaks: Vec<f64>,
    pub samples: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            params: None,
            freqs: GRID_FREQS.to_vec(),
            peaks: GRID_PEAKS.to_vec(),
            samples: SAMPLES_PER_PERIOD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Corpus directory written by `generate`.
    pub data: Option<PathBuf>,
    pub regime: String,
    pub n_shifts: usize,
    pub mu: f64,
    pub sigma: f64,
    /// `train:test` or `train:val:test`; 9:1 without augmentation, else 8:1:1.
    pub split: Option<Vec<f64>>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            data: None,
            regime: "none".into(),
            n_shifts: a.n_shifts,
            mu: a.mu,
            sigma: a.sigma,
            split: None,
        }
    }
}

impl AugmentSection {
    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            n_shifts: self.n_shifts,
            mu: self.mu,
            sigma: self.sigma,
        }
    }

    pub fn split_ratios(&self) -> Vec<f64> {
        match &self.split {
            Some(r) => r.clone(),
            None if self.regime == "none" => vec![9.0, 1.0],
            None => vec![8.0, 1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    /// Architecture overrides; `null` keeps the defaults.
    pub config: serde_json::Value,
    /// `f32` or `f64`.
    pub precision: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: "fno".into(),
            config: serde_json::Value::Null,
            precision: "f32".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Dataset directory written by `augment`.
    pub data: Option<PathBuf>,
    /// 300 for FNO and U-FNO, 6000 for DeepONet when absent.
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Run directory written by `train`.
    pub run: Option<PathBuf>,
    /// Test loops to plot; 4 for a 36-loop corpus, otherwise 5.
    pub plots: Option<usize>,
    /// MRE of a reference run, for the improvement figure.
    pub baseline_mre: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::for_model(&self.model.kind);
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs.unwrap_or(base.epochs),
            lr: t.lr.unwrap_or(base.lr),
            batch_size: t.batch_size,
            seed: self.seed,
            patience: t.patience,
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn check_precision(&self) -> Result<()> {
        if !matches!(self.model.precision.as_str(), "f32" | "f64") {
            return Err(usage(format!(
                "precision must be f32 or f64, got {:?}",
                self.model.precision
            )));
        }
        Ok(())
    }
}

/// A configuration or usage problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}
