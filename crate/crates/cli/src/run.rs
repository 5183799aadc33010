//! Output bookkeeping shared by all commands: files written, seeds used and
//! the manifest that records them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a [String],
    pub config: &'a Value,
    pub seeds: &'a [u64],
    pub tool_version: &'static str,
    pub outputs: &'a [String],
    pub wall_clock_seconds: f64,
    pub ok: bool,
    pub error: Option<String>,
}

pub struct Run {
    argv: Vec<String>,
    started: Instant,
    out_dir: Option<PathBuf>,
    manifest_path: Option<PathBuf>,
    pub config: Value,
    pub seeds: Vec<u64>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(argv: Vec<String>) -> Self {
        Run {
            argv,
            started: Instant::now(),
            out_dir: None,
            manifest_path: None,
            config: Value::Null,
            seeds: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Outputs go to `dir`, the manifest to `dir/manifest.json`.
    pub fn set_out_dir(&mut self, dir: &Path) {
        self.out_dir = Some(dir.to_path_buf());
        self.manifest_path = Some(dir.join("manifest.json"));
    }

    /// Single-file output; the manifest sits next to it.
    pub fn set_out_file(&mut self, path: &Path) {
        let mut name = path.as_os_str().to_os_string();
        name.push(".manifest.json");
        self.manifest_path = Some(PathBuf::from(name));
    }

    pub fn has_out_dir(&self) -> bool {
        self.out_dir.is_some()
    }

    /// Writes `name` into the output directory.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let dir = self.out_dir.clone().context("no output directory")?;
        self.write_path(&dir.join(name), contents)
    }

    pub fn write_path(&mut self, path: &Path, contents: &str) -> Result<PathBuf> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.display().to_string());
        Ok(path.to_path_buf())
    }

    /// Writes the manifest if the command has an output location.
    pub fn finish(&self, ok: bool, error: Option<String>) -> Result<()> {
        let Some(path) = &self.manifest_path else {
            return Ok(());
        };
        let manifest = RunManifest {
            command: &self.argv,
            config: &self.config,
            seeds: &self.seeds,
            tool_version: env!("CARGO_PKG_VERSION"),
            outputs: &self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            ok,
            error,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
