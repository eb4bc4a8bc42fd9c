use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use adbcr::checkpoint::write_atomic;

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub bytes: u64,
}

impl FileRecord {
    fn of(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            bytes: std::fs::metadata(path).map(|m| m.len()).unwrap_or(0),
        }
    }
}

/// Everything needed to rerun a command and check what it produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    /// Resolved configuration as `key=value` entries.
    pub config: Vec<String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub status: String,
    pub duration_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str, argv: &[String], seed: u64) -> Self {
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            status: "ok".into(),
            duration_secs: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn config_kv(&mut self, text: &str) {
        self.config = text.lines().map(str::to_string).collect();
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(FileRecord::of(path));
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(FileRecord::of(path));
    }

    /// Stamp the duration and write `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.duration_secs = self.started.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let json = serde_json::to_vec_pretty(&self)?;
        write_atomic(&dir.join("manifest.json"), &json)?;
        Ok(())
    }
}
