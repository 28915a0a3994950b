use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the manifest's directory when the file lives there.
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, base: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let shown = path.strip_prefix(base).unwrap_or(path);
        Ok(Self {
            path: shown.to_string_lossy().into_owned(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Record of one command invocation: what it read, what it wrote and with which settings.
/// Everything except `created_at` is a function of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub mode: Option<String>,
    pub seed: u64,
    pub config: Option<TrainConfig>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl RunManifest {
    pub fn new(command: &str, mode: Option<&str>, seed: u64, config: Option<&TrainConfig>) -> Self {
        Self {
            command: command.to_string(),
            mode: mode.map(str::to_string),
            seed,
            config: config.cloned(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_inputs(&mut self, paths: &[PathBuf], base: &Path) -> Result<()> {
        for p in paths {
            self.inputs.push(FileDigest::of(p, base)?);
        }
        Ok(())
    }

    pub fn add_artifacts(&mut self, paths: &[PathBuf], base: &Path) -> Result<()> {
        for p in paths {
            self.artifacts.push(FileDigest::of(p, base)?);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}
