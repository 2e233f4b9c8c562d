//! `manifest.json`: what ran, with which config, and what it wrote.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AppError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub config_sha256: String,
    pub status: String,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
}

/// Output directory plus the manifest being built.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    pub manifest: RunManifest,
}

impl OutputDir {
    pub fn create(root: &Path, experiment: &str, seed: u64, config_toml: &str) -> AppResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| AppError::io(root, e))?;
        let out = OutputDir {
            root: root.to_path_buf(),
            manifest: RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                experiment: experiment.to_string(),
                seed,
                config_sha256: sha256_hex(config_toml.as_bytes()),
                status: "running".into(),
                stages: Vec::new(),
                files: Vec::new(),
            },
        };
        out.write_raw("config.toml", config_toml.as_bytes())?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_raw(&self, name: &str, bytes: &[u8]) -> AppResult<()> {
        write_atomic(&self.root.join(name), bytes)
    }

    /// Write an output file and record its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> AppResult<()> {
        self.write_raw(name, bytes)?;
        self.manifest.files.retain(|f| f.path != name);
        self.manifest.files.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Run one stage, recording its status and wall time.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> AppResult<T>) -> AppResult<T> {
        log::info!("stage {name}");
        let start = Instant::now();
        let result = f(self);
        let status = match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        };
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            status,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        result
    }

    pub fn finish(&mut self, status: &str) -> AppResult<()> {
        self.manifest.status = status.to_string();
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(|e| AppError::Other(e.to_string()))?;
        self.write_raw("manifest.json", &json)
    }
}
