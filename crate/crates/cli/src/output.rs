//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use bevmap_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

/// Writes files under one directory and remembers their relative paths.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(rel.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Writes the manifest last, through a temporary file and a rename.
    pub fn finish(self, mut manifest: RunManifest) -> Result<()> {
        manifest.finished_unix = unix_now();
        manifest.outputs = self.written;
        manifest.output_dir = self.root.display().to_string();
        let tmp = self.root.join(".manifest.json.tmp");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        let dst = self.root.join(MANIFEST);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, enough to repeat the run.
    pub args: Vec<String>,
    pub config: Option<String>,
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config: None,
            inputs: Vec::new(),
            output_dir: String::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
