//! Run manifests: what was produced, from which configuration, with checksums.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::HarnessError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub files: Vec<FileRecord>,
    pub wall_clock_seconds: f64,
    pub status: RunStatus,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Output directory that records every file written through it.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(root).map_err(|e| HarnessError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::Io(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        self.files.retain(|f| f.path != relative);
        self.files.push(FileRecord { path: relative.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    /// Writes `manifest.json` listing the recorded files.
    pub fn finish(
        self,
        config_hash: String,
        seed: u64,
        wall_clock_seconds: f64,
        status: RunStatus,
    ) -> Result<RunManifest, HarnessError> {
        let manifest = RunManifest {
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            files: self.files,
            wall_clock_seconds,
            status,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.root.join(MANIFEST_NAME);
        fs::write(&path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, HarnessError> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Files whose current checksum differs from the manifest (or that are missing).
pub fn verify(dir: &Path, manifest: &RunManifest) -> Vec<String> {
    manifest
        .files
        .iter()
        .filter(|f| fs::read(dir.join(&f.path)).map(|b| sha256_hex(&b) != f.sha256).unwrap_or(true))
        .map(|f| f.path.clone())
        .collect()
}
