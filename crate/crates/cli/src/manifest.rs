use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tilembed::{write_atomic, Error, Result};

use crate::config::PipelineConfig;

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub path: PathBuf,
    pub sha256: String,
}

/// What a command read and wrote, with the full effective config, so the
/// run can be repeated. Holds no timestamps, so reruns write identical
/// manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub config_hash: String,
    /// Command-line options beyond the config file (`--hold-out`, `--mode`).
    pub options: serde_json::Value,
    pub config: PipelineConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputEntry>,
}

fn digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects the paths of one command run.
pub struct Run<'a> {
    pub command: &'static str,
    pub config: &'a PipelineConfig,
    pub options: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    pub fn new(command: &'static str, config: &'a PipelineConfig, options: serde_json::Value) -> Self {
        Run {
            command,
            config,
            options,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes `<dir>/<command>.manifest.json`.
    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(OutputEntry {
                    path: p.clone(),
                    sha256: digest(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.config.seed,
            threads: self.config.threads,
            config_hash: self.config.hash()?,
            options: self.options,
            config: self.config.clone(),
            inputs: self.inputs,
            outputs,
        };
        let path = dir.join(format!("{}.manifest.json", self.command));
        write_atomic(&path, &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(path)
    }
}
