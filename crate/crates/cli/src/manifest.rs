//! Per-run provenance: a lock on the output directory and a `manifest.json`
//! listing inputs, resolved config, outputs and content hashes.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".changerisk.lock";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes a file, or every regular file directly inside a directory.
pub fn hash_input(path: &Path) -> Result<BTreeMap<String, String>> {
    if !path.exists() {
        return Err(CliError::MissingInput(path.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(path, e))?;
            let p = entry.path();
            let name = entry.file_name().to_string_lossy().to_string();
            if p.is_file() && name != MANIFEST_FILE && !name.starts_with('.') {
                out.insert(p.display().to_string(), sha256_file(&p)?);
            }
        }
    } else {
        out.insert(path.display().to_string(), sha256_file(path)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub tool: String,
    pub feature_schema: u32,
    pub model_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            tool: env!("CARGO_PKG_VERSION").to_string(),
            feature_schema: changerisk::featurize::SCHEMA_VERSION,
            model_format: changerisk::gbdt::model::MODEL_FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Command-line arguments after the binary name, without `--out`.
    pub args: Vec<String>,
    pub config: RunConfig,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub versions: Versions,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::MissingInput(path.to_path_buf())
            } else {
                CliError::io(path, e)
            }
        })?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Core(e.into()))
    }
}

/// An output directory held for the duration of one run.
#[derive(Debug)]
pub struct OutDir {
    pub dir: PathBuf,
    lock: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl OutDir {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let lock = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Locked {
                    dir: dir.to_path_buf(),
                    lock,
                })
            }
            Err(e) => return Err(CliError::io(&lock, e)),
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            lock,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(hash_input(path)?);
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Core(e.into()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Registers a file some other writer produced.
    pub fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn finish(mut self, command: &str, args: &[String], config: &RunConfig) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(&self.dir.join(name))?);
        }
        let manifest = Manifest {
            command: command.to_string(),
            args: strip_out(args),
            config: config.clone(),
            inputs: std::mem::take(&mut self.inputs),
            outputs,
            versions: Versions::default(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Core(e.into()))?;
        bytes.push(b'\n');
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let held = OutDir::acquire(dir.path()).unwrap();
        assert!(matches!(OutDir::acquire(dir.path()), Err(CliError::Locked { .. })));
        drop(held);
        assert!(OutDir::acquire(dir.path()).is_ok());
    }

    #[test]
    fn out_flag_is_stripped() {
        let args: Vec<String> = ["train", "--out", "x", "--seed", "3", "--out=y"].map(String::from).into();
        assert_eq!(strip_out(&args), ["train", "--seed", "3"]);
    }
}
