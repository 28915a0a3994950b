use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SeqLimits;
use crate::error::{Error, Result};
use crate::model::{GeneratorMode, ModelDims};
use crate::objectives::RegWeights;
use crate::optim::{OptimizerKind, OptimizerSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QdUpdate {
    Frozen,
    #[default]
    Symmetric,
}

/// Which parts of the regularized adversarial loop are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Adversarial sampling with relevance reweighting.
    #[default]
    Full,
    /// Adversarial sampling, every sample weighted 1.
    NoRr,
    /// Uniform negatives, every sample weighted 1.
    NoRrNoAs,
}

/// Every training hyperparameter. Serialized as a flat TOML table; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    /// Concatenated bi-directional output width (half per direction).
    pub encoder_out_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub dropout: f64,
    pub tau: f64,
    pub max_epochs: usize,
    pub reg_a: u32,
    pub reg_b: u32,
    /// Candidate subset size for adversarial sampling.
    pub subset_size: usize,
    pub l2_coeff: f64,
    pub generator_mode: GeneratorMode,
    pub qd_update: QdUpdate,
    pub ablation: Ablation,
    pub seed: u64,
    pub batch_size: usize,
    /// Epochs without a dev-MAP improvement before stopping.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient norm cap; 0 disables.
    pub clip_norm: f64,
    /// Subtract a moving-average reward baseline in the generator update.
    pub reinforce_baseline: bool,
    pub baseline_decay: f64,
    /// QD epochs run after each QC epoch when `qd_update = "symmetric"`.
    pub qd_epochs_per_qc_epoch: usize,
    pub max_question_len: usize,
    pub max_code_len: usize,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub pool_negatives: usize,
    /// Keep every drawn negative with its weight and loss in the run result.
    pub record_samples: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 200,
            encoder_out_dim: 400,
            margin: 0.05,
            learning_rate: 1e-4,
            dropout: 0.25,
            tau: 0.2,
            max_epochs: 300,
            reg_a: 1,
            reg_b: 1,
            subset_size: 50,
            l2_coeff: 1e-5,
            generator_mode: GeneratorMode::Untied,
            qd_update: QdUpdate::Symmetric,
            ablation: Ablation::Full,
            seed: 0,
            batch_size: 64,
            patience: 10,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            reinforce_baseline: false,
            baseline_decay: 0.9,
            qd_epochs_per_qc_epoch: 1,
            max_question_len: 30,
            max_code_len: 200,
            min_freq: 1,
            max_vocab: 50_000,
            pool_negatives: 49,
            record_samples: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_usize = [
            ("embedding_dim", self.embedding_dim),
            ("encoder_out_dim", self.encoder_out_dim),
            ("subset_size", self.subset_size),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_question_len", self.max_question_len),
            ("max_code_len", self.max_code_len),
            ("min_freq", self.min_freq),
            ("pool_negatives", self.pool_negatives),
        ];
        for (name, v) in positive_usize {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.encoder_out_dim.is_multiple_of(2) {
            return Err(Error::Config("encoder_out_dim must be even".into()));
        }
        if self.max_vocab < 2 {
            return Err(Error::Config("max_vocab must be >= 2".into()));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("margin", self.margin),
            ("l2_coeff", self.l2_coeff),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("baseline_decay must be in [0, 1)".into()));
        }
        RegWeights::new(self.reg_a, self.reg_b)?;
        Ok(())
    }

    pub fn reg_weights(&self) -> RegWeights {
        RegWeights {
            a: self.reg_a,
            b: self.reg_b,
        }
    }

    pub fn limits(&self) -> SeqLimits {
        SeqLimits {
            question: self.max_question_len,
            code: self.max_code_len,
        }
    }

    pub fn dims(&self, nl_vocab_size: usize, code_vocab_size: usize) -> ModelDims {
        ModelDims {
            nl_vocab_size,
            code_vocab_size,
            embedding_dim: self.embedding_dim,
            output_dim: self.encoder_out_dim,
            dropout_rate: self.dropout,
        }
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            l2: self.l2_coeff,
            clip_norm: self.clip_norm,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
