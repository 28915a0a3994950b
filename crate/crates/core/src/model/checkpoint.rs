use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{QCModel, QDModel};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "advcode-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Qc,
    Qd,
    Generator,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Qc => "qc",
            ModelKind::Qd => "qd",
            ModelKind::Generator => "generator",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", content = "params", rename_all = "snake_case")]
pub enum ModelPayload {
    Qc(QCModel),
    Qd(QDModel),
}

/// Self-describing model file: parameters, the vocabulary fingerprints they were trained
/// against, and the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: ModelKind,
    pub nl_vocab_hash: String,
    pub code_vocab_hash: String,
    pub config: TrainConfig,
    pub model: ModelPayload,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, vocab: &Vocabulary, config: &TrainConfig, model: ModelPayload) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            kind,
            nl_vocab_hash: vocab.nl.hash(),
            code_vocab_hash: vocab.code.hash(),
            config: config.clone(),
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!(
                "{}: unsupported checkpoint format {:?}",
                path.display(),
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    /// Errors unless the checkpoint was trained against exactly this vocabulary.
    pub fn verify_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        for (expected, found) in [
            (&self.nl_vocab_hash, vocab.nl.hash()),
            (&self.code_vocab_hash, vocab.code.hash()),
        ] {
            if *expected != found {
                return Err(Error::VocabMismatch {
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn into_qc(self) -> Result<QCModel> {
        match (self.kind, self.model) {
            (ModelKind::Qc | ModelKind::Generator, ModelPayload::Qc(m)) => Ok(m),
            (kind, _) => Err(Error::ModelKind {
                expected: "qc".into(),
                found: kind.to_string(),
            }),
        }
    }

    pub fn into_qd(self) -> Result<QDModel> {
        match (self.kind, self.model) {
            (ModelKind::Qd, ModelPayload::Qd(m)) => Ok(m),
            (kind, _) => Err(Error::ModelKind {
                expected: "qd".into(),
                found: kind.to_string(),
            }),
        }
    }
}
