//! Run manifest: what a command read, what it wrote, and with which config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use sartol::{Error, Result};

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "run_manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config: RunConfig,
    /// Input path to sha256, sorted by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Collects digests while a command runs.
pub struct Recorder {
    manifest: RunManifest,
}

fn key(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

impl Recorder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            manifest: RunManifest {
                tool: format!("sartol {}", env!("CARGO_PKG_VERSION")),
                command: command.to_string(),
                config: config.clone(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = sha256_file(path)?;
        self.manifest.inputs.insert(key(path), d);
        Ok(())
    }

    /// Records every regular file under `dir`, recursively.
    pub fn input_dir(&mut self, dir: &Path) -> Result<()> {
        for f in files_under(dir)? {
            self.input(&f)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let d = sha256_file(path)?;
        self.manifest.outputs.insert(key(path), d);
        Ok(())
    }

    pub fn output_dir(&mut self, dir: &Path) -> Result<()> {
        for f in files_under(dir)? {
            self.output(&f)?;
        }
        Ok(())
    }

    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(RUN_MANIFEST);
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(path)
    }
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |e| Error::Io { path: dir.to_path_buf(), source: e };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
