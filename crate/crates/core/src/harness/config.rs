use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_panel, ConceptGraph, FeaturePanel, SyntheticSpec};
use crate::error::{MtmdError, Result};
use crate::model::ModelConfig;

/// Where the panel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Files { panel: PathBuf, concepts: PathBuf },
    Synthetic(SyntheticSpec),
}

/// Train/valid/test boundaries. Training takes everything before the
/// validation start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitConfig {
    Dates {
        valid_start: NaiveDate,
        test_start: NaiveDate,
    },
    /// Leading fractions of the date list for train and valid.
    Fractions { train: f64, valid: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = MtmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(MtmdError::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Date index ranges of the three splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: std::ops::Range<usize>,
    pub valid: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

impl SplitIndices {
    pub fn get(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Valid => self.valid.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

impl SplitConfig {
    pub fn resolve(&self, panel: &FeaturePanel) -> Result<SplitIndices> {
        let n = panel.len();
        let (a, b) = match self {
            SplitConfig::Dates {
                valid_start,
                test_start,
            } => {
                if valid_start > test_start {
                    return Err(MtmdError::Config("valid_start must not follow test_start".into()));
                }
                let first_at = |d: &NaiveDate| panel.dates.partition_point(|s| s.date < *d);
                (first_at(valid_start), first_at(test_start))
            }
            SplitConfig::Fractions { train, valid } => {
                if !(*train > 0.0 && *valid >= 0.0 && train + valid <= 1.0) {
                    return Err(MtmdError::Config("split fractions must be ordered within [0,1]".into()));
                }
                let a = (train * n as f64).floor() as usize;
                let b = ((train + valid) * n as f64).floor() as usize;
                (a, b.max(a))
            }
        };
        Ok(SplitIndices {
            train: 0..a,
            valid: a..b,
            test: b..n,
        })
    }
}

fn default_lr() -> f64 {
    2e-4
}

fn default_patience() -> usize {
    10
}

fn default_epochs() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 is plain SGD.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Epochs without a validation-IC improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Model initialization seed; overrides `model.seed`.
    #[serde(default)]
    pub seed: u64,
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataSource,
    /// Re-initialize the banks at the start of each epoch.
    #[serde(default)]
    pub reset_banks_each_epoch: bool,
    /// Keep writing the banks while scoring validation/test dates.
    #[serde(default)]
    pub memory_writes_in_eval: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MtmdError::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(MtmdError::Config("momentum must lie in [0,1)".into()));
        }
        self.model.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| MtmdError::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths are taken from the config's directory.
        if let DataSource::Files { panel, concepts } = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [panel, concepts] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Effective model config, with the run seed applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }
}

/// Loads or generates the panel named by `source`.
pub fn load_data(source: &DataSource) -> Result<(FeaturePanel, ConceptGraph)> {
    match source {
        DataSource::Files { panel, concepts } => load_panel(panel, concepts),
        DataSource::Synthetic(spec) => {
            let m = generate_synthetic(spec)?;
            Ok((m.panel, m.graph))
        }
    }
}
