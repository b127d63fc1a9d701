//! The flat, human-editable run configuration: one JSON document covering
//! model, training, baseline, data, and evaluation settings, with a stable
//! digest stamped into every artifact a run produces.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BowTrainConfig;
use crate::baselines::DeeprConfig;
use crate::data::ParseOptions;
use crate::embedding::Interaction;
use crate::eval::ModelSpec;
use crate::model::{ModelConfig, Variant};
use crate::optim::TrainConfig;
use crate::recurrent::{PoolKind, PoolingConfig, RegularizerConfig, RegularizerKind};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config file {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every knob of a run, flat and fully defaulted. Unknown keys in a config
/// file are rejected so typos cannot silently fall back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// One of: mdmt, mdmtp, bow-lr, deepr-mini.
    pub model: String,

    // Sequence-model hyperparameters.
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub epsilon: f64,
    pub interaction: Interaction,
    pub pooling: PoolKind,
    /// Exponential-smoothing factor (only read by that pooling kind).
    pub alpha: f64,
    /// Norm-stabilizer weight. Absent = the variant's default (0.01 for
    /// mdmtp, none for mdmt); explicitly setting a nonzero value on mdmt is
    /// rejected rather than silently ignored.
    pub beta: Option<f64>,
    pub classifier_depth: u8,

    // Training settings.
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip: f64,

    // Baseline settings.
    pub lambda: f64,
    pub bow_steps: usize,
    pub bow_lr: f64,
    pub filters: usize,
    pub filter_width: usize,

    // Data settings.
    pub truncate_icd10: bool,
    /// Days after discharge within which an unplanned visit counts as
    /// readmission when re-deriving labels; absent = trust file labels.
    pub label_window: Option<i64>,

    // Evaluation settings.
    pub folds: usize,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "mdmtp".into(),
            embedding_dim: 32,
            hidden_dim: 32,
            epsilon: 1e-3,
            interaction: Interaction::default(),
            pooling: PoolKind::default(),
            alpha: 0.5,
            beta: None,
            classifier_depth: 1,
            lr: 0.01,
            epochs: 30,
            batch: 16,
            patience: 5,
            seed: 0,
            clip: 5.0,
            lambda: 1e-3,
            bow_steps: 1000,
            bow_lr: 0.05,
            filters: 16,
            filter_width: 3,
            truncate_icd10: false,
            label_window: None,
            folds: 5,
            jobs: 1,
        }
    }
}

/// Hex SHA-256 of a value's canonical JSON form; the digest stamped into
/// every artifact alongside the seed that produced it.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes");
    let hash = Sha256::digest(json.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    /// The model name with flag-style hyphens normalized to underscores.
    fn normalized_model(&self) -> String {
        self.model.replace('-', "_")
    }

    /// SHA-256 over the canonical JSON form; stamped into artifacts.
    /// `jobs` is normalized away first: it only schedules work across
    /// threads and never changes results, so it must not distinguish runs.
    pub fn digest(&self) -> String {
        let canonical = RunConfig { jobs: 1, ..self.clone() };
        digest_json(&canonical)
    }

    /// Validate everything up front, before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_spec()?;
        if self.folds < 2 {
            return Err(ConfigError::Invalid(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        if let Some(window) = self.label_window {
            if window <= 0 {
                return Err(ConfigError::Invalid(format!(
                    "label_window must be positive, got {window}"
                )));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            seed: self.seed,
            patience: self.patience,
            lr: self.lr,
            clip: self.clip,
        }
    }

    pub fn bow_config(&self) -> BowTrainConfig {
        BowTrainConfig { steps: self.bow_steps, lr: self.bow_lr, lambda: self.lambda }
    }

    pub fn deepr_config(&self) -> DeeprConfig {
        DeeprConfig {
            embedding_dim: self.embedding_dim,
            filters: self.filters,
            width: self.filter_width,
            sequence_seed: self.seed,
        }
    }

    /// Build the sequence-model configuration (mdmt/mdmtp only).
    pub fn risk_config(&self) -> Result<ModelConfig, ConfigError> {
        let variant = match self.normalized_model().as_str() {
            "mdmt" => Variant::Mdmt,
            "mdmtp" => Variant::Mdmtp,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "model {other:?} is not a sequence model"
                )))
            }
        };
        let regularizer = match variant {
            Variant::Mdmt => {
                if let Some(beta) = self.beta {
                    if beta != 0.0 {
                        return Err(ConfigError::Invalid(format!(
                            "beta = {beta} requires model mdmtp; mdmt has no state penalty"
                        )));
                    }
                }
                RegularizerConfig { kind: RegularizerKind::None, beta: 0.0 }
            }
            Variant::Mdmtp => RegularizerConfig {
                kind: RegularizerKind::NormStabilizer,
                beta: self.beta.unwrap_or(0.01),
            },
        };
        let config = ModelConfig {
            variant,
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            epsilon: self.epsilon,
            interaction: self.interaction,
            pooling: PoolingConfig { kind: self.pooling, alpha: self.alpha },
            classifier_depth: self.classifier_depth,
            regularizer,
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    /// The full train+evaluate recipe selected by `model`.
    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        match self.normalized_model().as_str() {
            "mdmt" | "mdmtp" => Ok(ModelSpec::Risk {
                config: self.risk_config()?,
                train: self.validated_train()?,
            }),
            "bow_lr" => {
                let config = self.bow_config();
                config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(ModelSpec::BowLr { config })
            }
            "deepr_mini" => {
                let config = self.deepr_config();
                config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(ModelSpec::DeeprMini { config, train: self.validated_train()? })
            }
            other => Err(ConfigError::Invalid(format!(
                "unknown model {other:?}; expected mdmt, mdmtp, bow-lr, or deepr-mini"
            ))),
        }
    }

    fn validated_train(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = self.train_config();
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            strict: true,
            truncate_icd10: self.truncate_icd10,
            derive_labels: self.label_window,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_model() {
        for model in ["mdmt", "mdmtp", "bow-lr", "deepr-mini", "bow_lr", "deepr_mini"] {
            let cfg = RunConfig { model: model.into(), ..Default::default() };
            cfg.validate().unwrap_or_else(|e| panic!("{model}: {e}"));
        }
    }

    #[test]
    fn beta_defaults_follow_the_variant() {
        let mdmtp = RunConfig { model: "mdmtp".into(), ..Default::default() };
        assert_eq!(mdmtp.risk_config().unwrap().regularizer.beta, 0.01);
        let mdmt = RunConfig { model: "mdmt".into(), ..Default::default() };
        assert_eq!(mdmt.risk_config().unwrap().regularizer.beta, 0.0);
        let strong = RunConfig { model: "mdmtp".into(), beta: Some(0.2), ..Default::default() };
        assert_eq!(strong.risk_config().unwrap().regularizer.beta, 0.2);
    }

    #[test]
    fn unknown_model_and_bad_values_are_rejected() {
        let cfg = RunConfig { model: "tree".into(), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let cfg = RunConfig { epochs: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { folds: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { label_window: Some(0), ..Default::default() };
        assert!(cfg.validate().is_err());
        // beta on mdmt is contradictory, not silently dropped.
        let cfg = RunConfig { model: "mdmt".into(), beta: Some(0.5), ..Default::default() };
        assert!(cfg.validate().is_err());
        // An explicit zero is consistent with mdmt.
        let cfg = RunConfig { model: "mdmt".into(), beta: Some(0.0), ..Default::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let c = RunConfig { seed: 1, ..Default::default() };
        assert_ne!(a.digest(), c.digest());
        // Parallelism schedules the same work; it is not part of the digest.
        let parallel = RunConfig { jobs: 8, ..Default::default() };
        assert_eq!(a.digest(), parallel.digest());
    }

    #[test]
    fn file_round_trip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let cfg = RunConfig { model: "mdmt".into(), epochs: 7, ..Default::default() };
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        let loaded = RunConfig::from_file(&path).unwrap();
        assert_eq!(loaded, cfg);

        // Partial files take defaults for missing keys.
        std::fs::write(&path, r#"{"epochs": 3}"#).unwrap();
        let partial = RunConfig::from_file(&path).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.model, "mdmtp");

        // Unknown keys are a hard error naming the file.
        std::fs::write(&path, r#"{"epoch": 3}"#).unwrap();
        match RunConfig::from_file(&path).unwrap_err() {
            ConfigError::Parse { path: p, detail } => {
                assert!(p.ends_with("run.json"));
                assert!(detail.contains("epoch"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spec_matches_model_name() {
        let cfg = RunConfig { model: "bow-lr".into(), ..Default::default() };
        assert_eq!(cfg.model_spec().unwrap().name(), "bow_lr");
        let cfg = RunConfig { model: "mdmtp".into(), ..Default::default() };
        match cfg.model_spec().unwrap() {
            ModelSpec::Risk { config, train } => {
                assert_eq!(config.variant, Variant::Mdmtp);
                assert_eq!(config.regularizer.kind, RegularizerKind::NormStabilizer);
                assert_eq!(train.epochs, 30);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
