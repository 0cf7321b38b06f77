//! `manifest.json`, written next to every command's outputs. It carries no
//! timestamps or host details, so identical reruns produce identical
//! manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{config_hash, hex};
use crate::error::CliError;
use crate::formats::VERSION as FORMAT_VERSION;

pub const MANIFEST_FILE: &str = "manifest.json";

pub struct Manifest {
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    config_hash: String,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, resolved: &impl Serialize) -> Result<Self, CliError> {
        Ok(Manifest {
            command,
            seed,
            config: serde_json::to_value(resolved).map_err(anyhow::Error::from)?,
            config_hash: config_hash(resolved)?,
            outputs: Vec::new(),
        })
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hashes the recorded outputs and writes the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                let digest = file_sha256(p)?;
                let name = p.strip_prefix(dir).unwrap_or(p);
                Ok(json!({ "path": name.display().to_string(), "sha256": digest }))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let doc = json!({
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "config_hash": self.config_hash,
            "versions": {
                "overica": overica::VERSION,
                "oica": env!("CARGO_PKG_VERSION"),
                "container_format": FORMAT_VERSION,
            },
            "outputs": outputs,
        });
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, &doc)?;
        Ok(path)
    }
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    std::io::copy(&mut file, &mut h).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(hex(&h.finalize()))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(anyhow::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}
