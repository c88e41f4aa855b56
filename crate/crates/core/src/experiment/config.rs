//! JSON experiment description.
//!
//! ```json
//! {
//!   "k": 10,
//!   "rounds": 30,
//!   "local": { "epochs": 5, "batch_size": 128, "learning_rate": 0.05 },
//!   "dataset": { "synthetic": { "classes": 10, "features": 10, "per_class": 100, "spread": 0.35, "seed": 7 } },
//!   "model": { "kind": "logistic_regression" },
//!   "partition_seed": 1,
//!   "global_seed": 1,
//!   "strategy": "rfl_self",
//!   "selfish_roster": [ { "client": 0, "alpha": 0.5, "k_mode": "known" } ],
//!   "paired_counterfactual": true,
//!   "instrumented": false
//! }
//! ```
//!
//! Everything except `k` and `dataset` has a default. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{AggregationStrategy, ClientId};
use crate::error::{Error, Result};
use crate::metrics::{ClientSpec, Role};
use crate::selfish::KMode;
use crate::training::{load_idx_dataset, Architecture, Dataset, LocalTrainConfig, SyntheticParams};

/// Fraction of each client's partition held out for evaluation.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSettings {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

fn default_epochs() -> usize {
    5
}
fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_rounds() -> usize {
    30
}
fn default_true() -> bool {
    true
}

impl Default for LocalSettings {
    fn default() -> Self {
        LocalSettings {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
        }
    }
}

impl LocalSettings {
    /// The shuffle seed is supplied per client and round by the runner.
    pub fn with_shuffle_seed(&self, shuffle_seed: u64) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            shuffle_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticParams),
    IdxFiles {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(p) => p.generate(),
            DatasetSource::IdxFiles { images, labels, limit } => load_idx_dataset(images, labels, *limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    #[default]
    LogisticRegression,
    Mlp {
        hidden: usize,
    },
}

impl ModelSpec {
    pub fn architecture(&self, features: usize, classes: usize) -> Architecture {
        match *self {
            ModelSpec::LogisticRegression => Architecture::LogisticRegression { features, classes },
            ModelSpec::Mlp { hidden } => Architecture::Mlp {
                features,
                hidden,
                classes,
            },
        }
    }
}

/// How a selfish client learns the participant count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KModeChoice {
    /// Uses the configured `k`.
    #[default]
    Known,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfishEntry {
    pub client: ClientId,
    pub alpha: f64,
    #[serde(default)]
    pub k_mode: KModeChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub local: LocalSettings,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub partition_seed: u64,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: AggregationStrategy,
    #[serde(default)]
    pub selfish_roster: Vec<SelfishEntry>,
    #[serde(default = "default_true")]
    pub paired_counterfactual: bool,
    #[serde(default)]
    pub instrumented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_strategy() -> AggregationStrategy {
    AggregationStrategy::FedAvg
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        self.local
            .with_shuffle_seed(0)
            .validate()
            .map_err(|e| Error::Config(format!("local: {e}")))?;
        if let ModelSpec::Mlp { hidden: 0 } = self.model {
            return bad("mlp needs hidden >= 1".into());
        }
        let mut seen = BTreeSet::new();
        for entry in &self.selfish_roster {
            if entry.client >= self.k {
                return bad(format!("selfish client {} is outside [0, {})", entry.client, self.k));
            }
            if !seen.insert(entry.client) {
                return bad(format!("selfish client {} listed twice", entry.client));
            }
            if !(0.0..=1.0).contains(&entry.alpha) {
                return bad(format!(
                    "alpha {} of client {} is outside [0, 1]",
                    entry.alpha, entry.client
                ));
            }
            if self.k < 2 {
                return bad("selfish clients need k >= 2".into());
            }
        }
        Ok(())
    }

    /// One spec per client id, normal unless listed in the selfish roster.
    pub fn roster(&self) -> Vec<ClientSpec> {
        let mut specs: Vec<ClientSpec> = (0..self.k).map(ClientSpec::normal).collect();
        for entry in &self.selfish_roster {
            specs[entry.client] = ClientSpec {
                id: entry.client,
                role: Role::Selfish,
                alpha: Some(entry.alpha),
                k_mode: Some(match entry.k_mode {
                    KModeChoice::Known => KMode::Known(self.k),
                    KModeChoice::Estimated => KMode::Estimated,
                }),
            };
        }
        specs
    }

    /// Hex SHA-256 of the canonical JSON, ignoring `output_dir`.
    pub fn fingerprint(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
