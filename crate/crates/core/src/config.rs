//! Pipeline configuration.
//!
//! Every stage reads its knobs from one TOML document. All fields have
//! defaults, so an empty file (or no file) yields the reference setup:
//!
//! ```toml
//! [corpus]
//! min_poi_visits = 10
//! min_traj_len = 3
//! min_user_trajs = 5
//! window_hours = 24
//! train_frac = 0.8
//! tz_mode = "local"          # or "utc"
//! segment_mode = "anchored"  # or "gap"
//!
//! [context]
//! category_norm = "softmax"  # or "ratio"
//! dense_similarity_limit = 10000
//!
//! [embedding]
//! poi_dim = 500
//! category_dim = 50
//! walk_length = 80
//! walks_per_node = 10
//! window = 10
//! return_p = 1.0
//! inout_q = 1.0
//! epochs = 5
//! negatives = 5
//! learning_rate = 0.025
//! seed = 42
//!
//! [model]
//! user_dim = 40
//! slot_dim = 10
//! weekday_dim = 10
//! hidden = 500
//! kappa_max = 3
//! epsilon_mode = "hard"      # or "straight-through"
//! relax_temperature = 0.1
//! lambda = 0.1
//! init_range = 0.1
//! variant = "full"
//!
//! [train]
//! learning_rate = 1e-4
//! weight_decay = 1e-5
//! clip_norm = 5.0
//! batch_size = 32
//! max_epochs = 50
//! lr_patience = 3
//! early_stop_patience = 10
//! val_frac = 0.1
//! seed = 42
//!
//! [eval]
//! ks = [1, 5, 10]
//! aggregation = "per-prediction"  # or "per-user"
//! strict_train_history = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TzMode {
    #[default]
    Local,
    Utc,
}

/// How a user's check-in stream is cut into trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentMode {
    /// Window measured from the first check-in of the open trajectory.
    #[default]
    Anchored,
    /// Window measured from the previous check-in.
    Gap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CategoryNorm {
    #[default]
    Softmax,
    Ratio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonMode {
    /// Discrete argmin routing; ε weights receive no gradient.
    #[default]
    Hard,
    /// Temperature-softmin routing over the candidate predecessors.
    StraightThrough,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    PerPrediction,
    PerUser,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub min_poi_visits: usize,
    pub min_traj_len: usize,
    pub min_user_trajs: usize,
    pub window_hours: i64,
    pub train_frac: f64,
    pub tz_mode: TzMode,
    pub segment_mode: SegmentMode,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            min_poi_visits: 10,
            min_traj_len: 3,
            min_user_trajs: 5,
            window_hours: 24,
            train_frac: 0.8,
            tz_mode: TzMode::Local,
            segment_mode: SegmentMode::Anchored,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub category_norm: CategoryNorm,
    pub dense_similarity_limit: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            category_norm: CategoryNorm::Softmax,
            dense_similarity_limit: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub poi_dim: usize,
    pub category_dim: usize,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub return_p: f64,
    pub inout_q: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            poi_dim: 500,
            category_dim: 50,
            walk_length: 80,
            walks_per_node: 10,
            window: 10,
            return_p: 1.0,
            inout_q: 1.0,
            epochs: 5,
            negatives: 5,
            learning_rate: 0.025,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub user_dim: usize,
    pub slot_dim: usize,
    pub weekday_dim: usize,
    pub hidden: usize,
    pub kappa_max: usize,
    pub epsilon_mode: EpsilonMode,
    pub relax_temperature: f64,
    pub lambda: f64,
    pub init_range: f64,
    pub variant: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            user_dim: 40,
            slot_dim: 10,
            weekday_dim: 10,
            hidden: 500,
            kappa_max: 3,
            epsilon_mode: EpsilonMode::Hard,
            relax_temperature: 0.1,
            lambda: 0.1,
            init_range: 0.1,
            variant: "full".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps across all epochs, if set.
    pub max_steps: Option<usize>,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            clip_norm: 5.0,
            batch_size: 32,
            max_epochs: 50,
            max_steps: None,
            lr_patience: 3,
            early_stop_patience: 10,
            val_frac: 0.1,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub aggregation: Aggregation,
    pub strict_train_history: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            aggregation: Aggregation::PerPrediction,
            strict_train_history: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub context: ContextConfig,
    pub embedding: EmbeddingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Reduced sizes for quick CPU runs on small or synthetic corpora.
    pub fn small() -> Self {
        let mut c = Self::default();
        c.corpus.min_poi_visits = 3;
        c.corpus.min_user_trajs = 3;
        c.embedding.poi_dim = 32;
        c.embedding.category_dim = 8;
        c.embedding.walk_length = 20;
        c.embedding.walks_per_node = 5;
        c.embedding.epochs = 2;
        c.model.user_dim = 8;
        c.model.slot_dim = 4;
        c.model.weekday_dim = 4;
        c.model.hidden = 32;
        c.train.learning_rate = 5e-3;
        c.train.max_epochs = 8;
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Short content hash of any serializable configuration value.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.model.hidden, 500);
        assert_eq!(cfg.embedding.poi_dim, 500);
    }

    #[test]
    fn partial_override() {
        let cfg = PipelineConfig::from_toml_str(
            "[model]\nkappa_max = 5\nepsilon_mode = \"straight-through\"\n[eval]\naggregation = \"per-user\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model.kappa_max, 5);
        assert_eq!(cfg.model.epsilon_mode, EpsilonMode::StraightThrough);
        assert_eq!(cfg.model.user_dim, 40);
        assert_eq!(cfg.eval.aggregation, Aggregation::PerUser);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.corpus.window_hours = 12;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
    }
}
