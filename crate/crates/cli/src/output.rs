//! Run manifests and output-file persistence.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;

/// Replay record written next to every run's outputs: the resolved
/// configuration, its digest, the master seed, and the produced files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub master_seed: u64,
    pub model: String,
    pub overrides: BTreeMap<String, f64>,
    pub config_digest: String,
    pub config: FileConfig,
    pub timestamp: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, config: &FileConfig) -> Result<Self> {
        let canonical = config.canonical_toml()?;
        let digest = hex_digest(&canonical);
        Ok(Self {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed,
            model: config.model.name.clone(),
            overrides: config.model.overrides.clone(),
            config_digest: digest,
            config: config.clone(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs: Vec::new(),
        })
    }
}

pub fn hex_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let bytes = hasher.finalize();
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory: --out flag, then the environment default, then ./out.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("SLOWFAST_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub struct OutputWriter {
    dir: PathBuf,
    manifest: RunManifest,
}

impl OutputWriter {
    pub fn new(dir: PathBuf, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir, manifest })
    }

    pub fn write_text(&mut self, name: &str, content: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, content)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn write_report<T: Serialize>(&mut self, name: &str, report: &T) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(report)?;
        self.write_text(name, &json)
    }

    /// Writes the manifest last so it lists every produced file.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.outputs.push("manifest.json".to_string());
        let json = serde_json::to_string_pretty(&self.manifest)?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
