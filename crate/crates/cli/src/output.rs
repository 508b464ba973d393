//! Output directory bookkeeping: every emitted file is hashed as it is
//! written, and the run report carries a hash over everything except the
//! wall-clock timings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    /// Relative to the run's output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// One entry of the plotting manifest: which columns to draw against which.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotEntry {
    pub file: String,
    pub title: String,
    pub x: String,
    pub y: Vec<String>,
    pub log_x: bool,
    pub log_y: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub sections: BTreeMap<String, serde_json::Value>,
    pub violations: Vec<String>,
    pub files: Vec<FileEntry>,
    /// Seconds per stage; excluded from `report_hash`.
    pub timings: BTreeMap<String, f64>,
    pub report_hash: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    tool_version: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    sections: &'a BTreeMap<String, serde_json::Value>,
    violations: &'a [String],
    files: &'a [FileEntry],
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
            sections: BTreeMap::new(),
            violations: Vec::new(),
            files: Vec::new(),
            timings: BTreeMap::new(),
            report_hash: String::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn compute_hash(&self) -> String {
        let view = Hashed {
            tool_version: &self.tool_version,
            command: &self.command,
            seed: self.seed,
            config: &self.config,
            sections: &self.sections,
            violations: &self.violations,
            files: &self.files,
        };
        let bytes = serde_json::to_vec(&view).expect("report serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub struct Output {
    root: PathBuf,
    pub files: Vec<FileEntry>,
    pub plots: Vec<PlotEntry>,
}

impl Output {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Output { root: root.to_path_buf(), files: Vec::new(), plots: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry { path: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() });
        Ok(())
    }

    /// Buffers whatever `f` writes, then stores and hashes it.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> degenctrl_core::Result<()>,
    ) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).with_context(|| format!("serializing {name}"))?;
        self.write_bytes(name, &buf)
    }

    pub fn plot(&mut self, file: &str, title: &str, x: &str, y: &[&str], log_x: bool, log_y: bool) {
        self.plots.push(PlotEntry {
            file: file.to_string(),
            title: title.to_string(),
            x: x.to_string(),
            y: y.iter().map(|s| s.to_string()).collect(),
            log_x,
            log_y,
        });
    }

    /// Records files written elsewhere (by a nested run) under `prefix/`.
    pub fn adopt(&mut self, prefix: &str, files: &[FileEntry], plots: &[PlotEntry]) {
        for f in files {
            self.files.push(FileEntry { path: format!("{prefix}/{}", f.path), ..f.clone() });
        }
        for p in plots {
            self.plots.push(PlotEntry { file: format!("{prefix}/{}", p.file), ..p.clone() });
        }
    }

    /// Writes `plots.json`, hashes the report, then `manifest.txt` and
    /// `report.json`.
    pub fn finish(mut self, mut report: RunReport) -> anyhow::Result<RunReport> {
        if !self.plots.is_empty() {
            let plots = serde_json::to_vec_pretty(&self.plots)?;
            self.write_bytes("plots.json", &plots)?;
        }
        report.files = self.files;
        report.report_hash = report.compute_hash();
        let mut manifest = format!("# report_hash {}\n", report.report_hash);
        for f in &report.files {
            manifest.push_str(&format!("{}  {}\n", f.sha256, f.path));
        }
        fs::write(self.root.join("manifest.txt"), manifest)?;
        fs::write(self.root.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
        Ok(report)
    }
}
