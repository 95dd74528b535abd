use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of_bytes(path: &Path, bytes: &[u8]) -> Self {
        Self { path: path.display().to_string(), sha256: format!("{:x}", Sha256::digest(bytes)) }
    }

    pub fn of_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::of_bytes(path, &fs::read(path)?))
    }
}

/// Everything needed to reproduce a run, plus what it produced.
///
/// Wall-clock timings live here only, never in trace or field files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_report: Option<serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
    pub timings: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config,
            kernel_report: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            timings: serde_json::Value::Null,
        }
    }

    /// Write `bytes` to `path` and record its digest.
    pub fn emit(&mut self, path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes)?;
        self.outputs.push(FileDigest::of_bytes(path, bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
