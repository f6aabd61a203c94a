//! Run manifests. Every output directory gets exactly one `manifest.toml`
//! holding the command, the full configuration, the seed and the files
//! written, which is enough to replay the run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::Command;

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Seconds since the Unix epoch when the run finished.
    pub timestamp: u64,
    pub seed: u64,
    pub command: Command,
    pub inputs: Vec<PathBuf>,
    /// File names inside the output directory.
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: Command, config: RunConfig, seed: u64, outputs: Vec<String>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
            seed,
            inputs: command.inputs(),
            command,
            outputs,
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, toml::to_string(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
