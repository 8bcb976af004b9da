//! Run configuration: training and blob-detection parameters plus output
//! paths, read from a TOML file and overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sinnet_core::{BlobParams, TrainConfig};

use crate::{io_err, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run every stage sequentially so repeated runs are bit-identical.
    /// Stages currently always run on one thread.
    pub deterministic_mode: bool,
    pub train: TrainConfig,
    pub blob: BlobParams,
    pub paths: Paths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Model file written by `train` and read by `detect`.
    pub model: Option<PathBuf>,
    /// JSON training log written by `train`.
    pub train_log: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            deterministic_mode: true,
            train: TrainConfig::default(),
            blob: BlobParams::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    /// The configuration from `path`, or the defaults when `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.blob.validate()?;
        Ok(())
    }
}
