//! Turning manifests into mixed examples, and writing synthetic corpora.

use std::path::{Path, PathBuf};

use avns_core::data::{generate_synthetic_corpus, mix_pair, MixManifestEntry, SynthConfig};
use avns_core::signal::Stft;
use avns_core::train::TrainExample;
use avns_core::visual::AedLabels;

use crate::error::{AppError, Result};
use crate::features::{read_feature_file, write_feature_file};
use crate::manifest::{write_manifest, Manifest};
use crate::wav::{read_wav, write_wav};

/// A mixed manifest entry.
#[derive(Debug, Clone)]
pub struct LoadedExample {
    pub example: TrainExample,
    pub snr_db: f64,
}

/// Reads and mixes entry `index`. The mix depends only on the entry, its
/// position and `seed`. Labels are decoded only when `num_labels` is given.
pub fn load_entry(m: &Manifest, index: usize, stft: &Stft, seed: u64, num_labels: Option<usize>) -> Result<LoadedExample> {
    let e = &m.entries[index];
    let clean = read_wav(m.resolve(&e.clean_path))?;
    let noise = read_wav(m.resolve(&e.noise_path))?;
    let features = read_feature_file(m.resolve(&e.features_path))?;
    let labels = num_labels.map(|k| AedLabels::from_indices(&e.labels, k)).transpose()?;
    let mix = mix_pair(&clean, &noise, e.snr_db, &mut e.mix_rng(seed, index))?;
    let example = TrainExample::new(stft, e.id.clone(), mix.noisy, mix.clean, Some(features), labels.map(|l| l.as_targets()))?;
    Ok(LoadedExample { example, snr_db: mix.achieved_snr_db })
}

pub fn load_all(m: &Manifest, stft: &Stft, seed: u64, num_labels: Option<usize>) -> Result<Vec<LoadedExample>> {
    (0..m.entries.len()).map(|i| load_entry(m, i, stft, seed, num_labels)).collect()
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| AppError::io(p, e))
}

/// Writes `n` synthetic examples under `dir` and returns the manifest path.
pub fn write_synthetic_corpus(dir: &Path, n: usize, cfg: &SynthConfig, seed: u64) -> Result<PathBuf> {
    let corpus = generate_synthetic_corpus(n, cfg, seed)?;
    for sub in ["clean", "noise", "features"] {
        create_dir(&dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(n);
    for ex in &corpus {
        let clean = format!("clean/{}.wav", ex.id);
        let noise = format!("noise/{}.wav", ex.id);
        let feats = format!("features/{}.avf", ex.id);
        write_wav(dir.join(&clean), &ex.clean)?;
        write_wav(dir.join(&noise), &ex.noise)?;
        write_feature_file(dir.join(&feats), &ex.features)?;
        entries.push(MixManifestEntry {
            id: ex.id.clone(),
            clean_path: clean,
            noise_path: noise,
            features_path: feats,
            labels: ex.label_indices.clone(),
            snr_db: None,
            seed: None,
        });
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &entries)?;
    Ok(path)
}
