//! JSON-lines manifests. Relative paths resolve against the manifest's
//! directory.

use std::path::{Path, PathBuf};

use avns_core::data::MixManifestEntry;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub clean_path: String,
    pub noise_path: String,
    pub features_path: String,
    #[serde(default)]
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ManifestLine {
    pub fn from_entry(e: &MixManifestEntry) -> Self {
        Self {
            id: Some(e.id.clone()),
            clean_path: e.clean_path.clone(),
            noise_path: e.noise_path.clone(),
            features_path: e.features_path.clone(),
            labels: e.labels.clone(),
            snr_db: e.snr_db,
            seed: e.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub entries: Vec<MixManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

pub fn parse_manifest(text: &str, dir: &Path, origin: &Path) -> Result<Manifest> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: ManifestLine =
            serde_json::from_str(line).map_err(|e| AppError::format(origin, format!("line {}: {e}", n + 1)))?;
        entries.push(MixManifestEntry {
            id: l.id.unwrap_or_else(|| format!("entry{:05}", entries.len())),
            clean_path: l.clean_path,
            noise_path: l.noise_path,
            features_path: l.features_path,
            labels: l.labels,
            snr_db: l.snr_db,
            seed: l.seed,
        });
    }
    Ok(Manifest { dir: dir.to_path_buf(), entries })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &dir, path)
}

pub fn render_manifest(entries: &[MixManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(&ManifestLine::from_entry(e)).expect("manifest line serializes") + "\n")
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[MixManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_manifest(entries)).map_err(|e| AppError::io(path, e))
}
