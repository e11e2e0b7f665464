//! Volume normalization, SNR-controlled mixing and the synthetic corpus.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::invalid;
use crate::rng::{indexed, stream, Rng};
use crate::signal::Waveform;
use crate::visual::{AedLabels, VisualFeatureSequence};
use crate::{Result, SAMPLE_RATE};

pub const DEFAULT_TARGET_DBFS: f64 = -25.0;
/// Standard deviation of the sampled mixing SNR in dB.
pub const SNR_STD_DB: f64 = 5.0;
/// Crossfade used when tiling short noise, in samples (10 ms).
pub const CROSSFADE: usize = 160;

fn db_to_amp(db: f64) -> f64 {
    libm::pow(10.0, db / 20.0)
}

/// Scales `w` so its RMS is `10^(target_dbfs / 20)`. Values may exceed
/// full scale afterwards; they are not clipped.
pub fn normalize_rms(w: &Waveform, target_dbfs: f64) -> Result<Waveform> {
    let rms = w.rms();
    if w.is_empty() || rms == 0.0 {
        return Err(invalid!("cannot normalize a zero-energy waveform"));
    }
    let g = db_to_amp(target_dbfs) / rms;
    Waveform::new(w.samples().iter().map(|&s| s * g).collect())
}

/// Mixing SNR in dB drawn from a Gaussian with mean 0 and std 5.
pub fn sample_snr(rng: &mut Rng) -> f64 {
    Normal::new(0.0, SNR_STD_DB).expect("valid normal").sample(rng)
}

/// Brings noise to `len` samples: longer noise is cropped at a random
/// offset, shorter noise is tiled with a linear crossfade.
pub fn fit_noise_length(noise: &Waveform, len: usize, rng: &mut Rng) -> Result<Waveform> {
    let n = noise.len();
    if n == 0 {
        return Err(invalid!("empty noise waveform"));
    }
    let src = noise.samples();
    if n >= len {
        let off = if n == len { 0 } else { rng.random_range(0..=n - len) };
        return Waveform::new(src[off..off + len].to_vec());
    }
    let xf = if n > 2 * CROSSFADE { CROSSFADE } else { 0 };
    let mut out = src.to_vec();
    while out.len() < len {
        let start = out.len() - xf;
        for i in 0..xf {
            let a = (i + 1) as f64 / (xf + 1) as f64;
            out[start + i] = out[start + i] * (1.0 - a) + src[i] * a;
        }
        out.extend_from_slice(&src[xf..]);
    }
    out.truncate(len);
    Waveform::new(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub noisy: Waveform,
    pub clean: Waveform,
    /// Noise after gain, so that `noisy = clean + noise`.
    pub noise: Waveform,
    pub gain: f64,
    pub achieved_snr_db: f64,
}

/// `noisy = clean + g * noise` with `g` chosen so the SNR equals `snr_db`.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<MixResult> {
    if clean.len() != noise.len() {
        return Err(invalid!("clean has {} samples, noise {}", clean.len(), noise.len()));
    }
    if !snr_db.is_finite() {
        return Err(invalid!("non-finite SNR"));
    }
    let (rc, rn) = (clean.rms(), noise.rms());
    if rn == 0.0 {
        return Err(invalid!("zero-energy noise"));
    }
    if rc == 0.0 {
        return Err(invalid!("zero-energy clean signal"));
    }
    let gain = rc / rn * db_to_amp(-snr_db);
    let scaled: Vec<f64> = noise.samples().iter().map(|&v| v * gain).collect();
    let noisy = clean.samples().iter().zip(&scaled).map(|(c, n)| c + n).collect();
    let scaled = Waveform::new(scaled)?;
    let achieved_snr_db = 10.0 * libm::log10(energy(clean.samples()) / energy(scaled.samples()));
    Ok(MixResult { noisy: Waveform::new(noisy)?, clean: clean.clone(), noise: scaled, gain, achieved_snr_db })
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Normalizes both signals, fits the noise length and mixes. The SNR is
/// sampled from `rng` when not given.
pub fn mix_pair(clean: &Waveform, noise: &Waveform, snr_db: Option<f64>, rng: &mut Rng) -> Result<MixResult> {
    let clean = normalize_rms(clean, DEFAULT_TARGET_DBFS)?;
    let noise = normalize_rms(noise, DEFAULT_TARGET_DBFS)?;
    let noise = fit_noise_length(&noise, clean.len(), rng)?;
    let snr = snr_db.unwrap_or_else(|| sample_snr(rng));
    mix_at_snr(&clean, &noise, snr)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct MixManifestEntry {
    pub id: String,
    pub clean_path: String,
    pub noise_path: String,
    pub features_path: String,
    pub labels: Vec<usize>,
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
}

impl MixManifestEntry {
    /// The rng used to mix this entry: its own seed if set, else derived
    /// from the global seed and the entry's position.
    pub fn mix_rng(&self, global_seed: u64, index: usize) -> Rng {
        match self.seed {
            Some(s) => stream(s, "mix"),
            None => indexed(global_seed, "mix", index as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_secs: f64,
    pub num_labels: usize,
    pub feature_dim: usize,
    pub frame_rate: f64,
    /// Std of the Gaussian added to every feature coordinate.
    pub feature_noise: f64,
    pub min_active: usize,
    pub max_active: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_secs: 1.0,
            num_labels: 5,
            feature_dim: 16,
            frame_rate: 2.0,
            feature_noise: 0.1,
            min_active: 1,
            max_active: 3,
        }
    }
}

impl SynthConfig {
    pub fn samples(&self) -> usize {
        libm::round(self.duration_secs * SAMPLE_RATE as f64) as usize
    }

    pub fn visual_frames(&self) -> usize {
        (libm::ceil(self.duration_secs * self.frame_rate - 1e-9) as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_secs > 0.0) || self.samples() < 2 * 320 {
            return Err(invalid!("synthetic clips must be at least 40 ms"));
        }
        if self.num_labels == 0 || self.feature_dim == 0 || !(self.frame_rate > 0.0) {
            return Err(invalid!("labels, feature dim and frame rate must be positive"));
        }
        if self.min_active == 0 || self.min_active > self.max_active || self.max_active > self.num_labels {
            return Err(invalid!("active label range {}..={} invalid for {} labels", self.min_active, self.max_active, self.num_labels));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExample {
    pub id: String,
    pub clean: Waveform,
    pub noise: Waveform,
    pub features: VisualFeatureSequence,
    pub labels: AedLabels,
    pub label_indices: Vec<usize>,
}

/// Harmonic speech stand-in: a gliding f0 with 1/h harmonics below 3.5 kHz
/// under a syllable-rate envelope.
fn speech_proxy(len: usize, r: &mut Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = r.random_range(100.0..220.0);
    let glide: f64 = r.random_range(-0.15..0.15);
    let syl_rate = r.random_range(3.0..5.0);
    let syl_phase = r.random_range(0.0..1.0);
    let harmonics = (3500.0 / (f0 * (1.0 + glide.abs()))) as usize;
    let phases: Vec<f64> = (0..harmonics).map(|_| r.random_range(0.0..2.0 * PI)).collect();
    let mut phase = 0.0;
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let f = f0 * (1.0 + glide * libm::sin(2.0 * PI * 0.7 * t));
            phase += 2.0 * PI * f / sr;
            let s: f64 = (1..=harmonics).map(|h| libm::sin(h as f64 * phase + phases[h - 1]) / h as f64).sum();
            let env = libm::sin(PI * libm::fmod(t * syl_rate + syl_phase, 1.0));
            s * (0.15 + env * env)
        })
        .collect()
}

/// Centre frequency of noise class `k`, spread over 2.6 to 7.6 kHz.
fn class_centre(k: usize, num_labels: usize) -> f64 {
    2600.0 + 5000.0 * (k as f64 + 0.5) / num_labels as f64
}

/// One noise class: tone pairs, chirps or band-limited noise, all placed
/// above the speech band.
fn class_noise(k: usize, num_labels: usize, len: usize, r: &mut Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let fc = class_centre(k, num_labels);
    let width = 1800.0 / num_labels as f64;
    let mut out = vec![0.0; len];
    match k % 3 {
        0 => {
            let (p1, p2) = (r.random_range(0.0..2.0 * PI), r.random_range(0.0..2.0 * PI));
            let rate = r.random_range(4.0..8.0);
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let gate = 0.6 + 0.4 * libm::cos(2.0 * PI * rate * t);
                *o = gate * (libm::sin(2.0 * PI * fc * t + p1) + 0.7 * libm::sin(2.0 * PI * (fc + 0.3 * width) * t + p2));
            }
        }
        1 => {
            let period = r.random_range(0.15..0.3);
            let mut phase = r.random_range(0.0..2.0 * PI);
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let f = fc - 0.5 * width + width * libm::fmod(t / period, 1.0);
                phase += 2.0 * PI * f / sr;
                *o = libm::sin(phase);
            }
        }
        _ => {
            let parts = 24;
            let comps: Vec<(f64, f64)> = (0..parts)
                .map(|_| (r.random_range(fc - 0.5 * width..fc + 0.5 * width), r.random_range(0.0..2.0 * PI)))
                .collect();
            let burst = r.random_range(0.08..0.2);
            let offset = r.random_range(0.0..burst);
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let on = libm::fmod(t + offset, 2.0 * burst) < burst;
                let s: f64 = comps.iter().map(|&(f, p)| libm::sin(2.0 * PI * f * t + p)).sum();
                *o = if on { s / 4.0 } else { 0.05 * s / 4.0 };
            }
        }
    }
    out
}

/// Fixed unit direction in feature space for each class.
pub fn class_directions(cfg: &SynthConfig, seed: u64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    (0..cfg.num_labels)
        .map(|k| {
            let mut r = indexed(seed, "class-direction", k as u64);
            let v: Vec<f64> = (0..cfg.feature_dim).map(|_| normal.sample(&mut r)).collect();
            let n = libm::sqrt(energy(&v));
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// A deterministic desk-scale corpus; example `i` depends only on
/// `(cfg, seed, i)`.
pub fn generate_synthetic_corpus(n: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<SyntheticExample>> {
    cfg.validate()?;
    let dirs = class_directions(cfg, seed);
    (0..n).map(|i| synthetic_example(i, cfg, seed, &dirs)).collect()
}

fn synthetic_example(i: usize, cfg: &SynthConfig, seed: u64, dirs: &[Vec<f64>]) -> Result<SyntheticExample> {
    let mut r = indexed(seed, "synthetic-example", i as u64);
    let len = cfg.samples();
    let clean = Waveform::new(speech_proxy(len, &mut r))?;

    let count = r.random_range(cfg.min_active..=cfg.max_active);
    let mut pool: Vec<usize> = (0..cfg.num_labels).collect();
    let mut active = Vec::with_capacity(count);
    for _ in 0..count {
        active.push(pool.swap_remove(r.random_range(0..pool.len())));
    }
    active.sort_unstable();

    let mut noise = vec![0.0; len];
    for &k in &active {
        let g = r.random_range(0.5..1.0);
        for (o, v) in noise.iter_mut().zip(class_noise(k, cfg.num_labels, len, &mut r)) {
            *o += g * v;
        }
    }

    let frames = cfg.visual_frames();
    let normal = Normal::new(0.0, cfg.feature_noise).expect("valid std");
    let mut feats = Vec::with_capacity(frames * cfg.feature_dim);
    for _ in 0..frames {
        for d in 0..cfg.feature_dim {
            let s: f64 = active.iter().map(|&k| dirs[k][d]).sum();
            feats.push((s + normal.sample(&mut r)) as f32);
        }
    }
    Ok(SyntheticExample {
        id: format!("syn{i:05}"),
        clean,
        noise: Waveform::new(noise)?,
        features: VisualFeatureSequence::new(frames, cfg.feature_dim, feats, cfg.frame_rate, false)?,
        labels: AedLabels::from_indices(&active, cfg.num_labels)?,
        label_indices: active,
    })
}
