use std::path::{Path, PathBuf};

use aad_core::catcn::CatcnConfig;
use aad_core::harness::{FoldMode, ModelKind, TrainConfig, EVAL_WINDOWS_S};
use aad_core::{AadError, Result};
use serde::{Deserialize, Serialize};

fn default_mode() -> FoldMode {
    FoldMode::Si
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Catcn]
}

fn default_windows() -> Vec<f64> {
    EVAL_WINDOWS_S.to_vec()
}

fn default_dataset() -> String {
    "synthetic".into()
}

/// One experiment, as read from `--config` and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of preprocessed trial bundles.
    pub data: PathBuf,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "default_mode")]
    pub mode: FoldMode,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    /// Network layout; `c` is replaced by the data's channel count.
    #[serde(default)]
    pub catcn: Option<CatcnConfig>,
    #[serde(default = "default_windows")]
    pub windows: Vec<f64>,
    /// Subset of outer folds to run; all when absent.
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
    /// Trained CA-TCN checkpoints to evaluate instead of training.
    #[serde(default)]
    pub checkpoints: Option<PathBuf>,
}

impl RunConfig {
    pub fn with_data(data: PathBuf) -> Self {
        RunConfig {
            data,
            dataset: default_dataset(),
            mode: default_mode(),
            models: default_models(),
            seed: 0,
            train: TrainConfig::default(),
            catcn: None,
            windows: default_windows(),
            folds: None,
            checkpoints: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AadError::Config(format!("cannot read {}: {e}", path.display())))?;
        // serde reports the offending field with line and column
        serde_json::from_str(&text).map_err(|e| AadError::Config(format!("{}: {e}", path.display())))
    }

    pub fn catcn(&self) -> CatcnConfig {
        self.catcn.clone().unwrap_or_else(|| CatcnConfig::final_model(0))
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |p: &Path, what: &str| {
            Err(AadError::Config(format!("{what} {} does not exist", p.display())))
        };
        if !self.data.is_dir() {
            return missing(&self.data, "data directory");
        }
        if let Some(c) = &self.checkpoints {
            if !c.is_dir() {
                return missing(c, "checkpoint directory");
            }
        }
        if self.models.is_empty() {
            return Err(AadError::Config("no models selected".into()));
        }
        if self.windows.is_empty() || self.windows.iter().any(|w| !(*w > 0.0)) {
            return Err(AadError::Config("window lengths must be positive".into()));
        }
        self.train.validate()
    }
}
