//! STFT analysis/synthesis, mask application and magnitudes.
//!
//! All DSP runs in `f64`. Besides the forward transforms, [`Stft`] exposes
//! the adjoint of each linear map so losses defined on waveforms or
//! magnitudes can be back-propagated onto the mask.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, shape_err};
use crate::tensor::gemm;
use crate::{Error, Result, SAMPLE_RATE};

/// Mono 16 kHz signal with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("non-finite sample at index {i}"));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self { samples: vec![0.0; len] }
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        libm::sqrt(self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64)
    }
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub center_pad: bool,
}

impl Default for StftConfig {
    /// 20 ms periodic-Hann frames with a 10 ms hop at 16 kHz: 161 bins.
    fn default() -> Self {
        Self { n_fft: 320, hop: 160, center_pad: true }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 4 || self.n_fft % 2 != 0 {
            return Err(invalid!("n_fft must be even and >= 4, got {}", self.n_fft));
        }
        // periodic Hann overlap-adds to a constant for hop = n_fft / (2m)
        if self.hop == 0 || self.n_fft % self.hop != 0 || (self.n_fft / self.hop) % 2 != 0 {
            return Err(invalid!("hop {} must divide n_fft {} an even number of times", self.hop, self.n_fft));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        if self.center_pad {
            1 + len / self.hop
        } else if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }
}

/// Two-channel (real, imaginary) spectrogram laid out (2, frames, bins).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self { frames, bins, data: vec![0.0; 2 * frames * bins] }
    }

    pub fn from_vec(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * frames * bins {
            return Err(shape_err!("{} values for spectrogram (2, {frames}, {bins})", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite spectrogram entry"));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn real(&self) -> &[f64] {
        &self.data[..self.frames * self.bins]
    }
    pub fn imag(&self) -> &[f64] {
        &self.data[self.frames * self.bins..]
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Real (frames x bins) magnitude matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitude {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

/// `sqrt(re^2 + im^2)` per bin.
pub fn magnitude(spec: &ComplexSpectrogram) -> Magnitude {
    let data = spec.real().iter().zip(spec.imag()).map(|(&r, &i)| libm::hypot(r, i)).collect();
    Magnitude { frames: spec.frames, bins: spec.bins, data }
}

/// Back-propagate a magnitude gradient onto the complex entries.
/// Bins with zero magnitude receive zero gradient.
pub fn magnitude_backward(spec: &ComplexSpectrogram, dmag: &[f64]) -> ComplexSpectrogram {
    let n = spec.frames * spec.bins;
    let mut out = ComplexSpectrogram::zeros(spec.frames, spec.bins);
    for i in 0..n {
        let (r, im) = (spec.data[i], spec.data[n + i]);
        let m = libm::hypot(r, im);
        if m > 0.0 {
            out.data[i] = dmag[i] * r / m;
            out.data[n + i] = dmag[i] * im / m;
        }
    }
    out
}

/// Per-channel gating: `out[c, t, f] = mask[c, t, f] * noisy[c, t, f]`.
pub fn apply_mask(noisy: &ComplexSpectrogram, mask: &[f64]) -> Result<ComplexSpectrogram> {
    if mask.len() != noisy.data.len() {
        return Err(invalid!("mask has {} entries, spectrogram {}", mask.len(), noisy.data.len()));
    }
    if let Some(&value) = mask.iter().find(|&&m| !(0.0..=1.0).contains(&m)) {
        return Err(Error::InvalidMask { value });
    }
    let data = noisy.data.iter().zip(mask).map(|(x, m)| x * m).collect();
    Ok(ComplexSpectrogram { frames: noisy.frames, bins: noisy.bins, data })
}

/// Index into a signal of length `len` under repeated edge reflection.
fn reflect(mut j: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let last = len as isize - 1;
    loop {
        if j < 0 {
            j = -j;
        } else if j > last {
            j = 2 * last - j;
        } else {
            return j as usize;
        }
    }
}

/// Precomputed STFT with periodic Hann window.
#[derive(Debug, Clone)]
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    /// (n_fft x bins) analysis bases.
    cos_a: Vec<f64>,
    sin_a: Vec<f64>,
    /// (bins x n_fft) synthesis bases, Hermitian weights and 1/N folded in.
    cos_s: Vec<f64>,
    sin_s: Vec<f64>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_fft;
        let f = cfg.bins();
        let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64)).collect();
        let mut cos_a = vec![0.0; n * f];
        let mut sin_a = vec![0.0; n * f];
        let mut cos_s = vec![0.0; f * n];
        let mut sin_s = vec![0.0; f * n];
        for t in 0..n {
            for k in 0..f {
                let ang = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                let (s, c) = (libm::sin(ang), libm::cos(ang));
                cos_a[t * f + k] = c;
                sin_a[t * f + k] = s;
                let w = if k == 0 || 2 * k == n { 1.0 } else { 2.0 } / n as f64;
                cos_s[k * n + t] = w * c;
                // imaginary parts of DC and Nyquist do not contribute
                sin_s[k * n + t] = if k == 0 || 2 * k == n { 0.0 } else { w * s };
            }
        }
        Ok(Self { cfg, window, cos_a, sin_a, cos_s, sin_s })
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn pad(&self) -> usize {
        if self.cfg.center_pad {
            self.cfg.n_fft / 2
        } else {
            0
        }
    }

    fn padded(&self, x: &[f64]) -> Vec<f64> {
        let pad = self.pad();
        if pad == 0 {
            return x.to_vec();
        }
        (0..x.len() + 2 * pad).map(|i| x[reflect(i as isize - pad as isize, x.len())]).collect()
    }

    pub fn stft(&self, wave: &Waveform) -> Result<ComplexSpectrogram> {
        self.stft_slice(wave.samples())
    }

    pub fn stft_slice(&self, x: &[f64]) -> Result<ComplexSpectrogram> {
        if x.is_empty() {
            return Err(invalid!("empty waveform"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite samples"));
        }
        let (n, hop, f) = (self.cfg.n_fft, self.cfg.hop, self.cfg.bins());
        let frames = self.cfg.frames(x.len());
        if frames == 0 {
            return Err(invalid!("{} samples is shorter than one frame", x.len()));
        }
        let xp = self.padded(x);
        let mut framed = vec![0.0; frames * n];
        for t in 0..frames {
            for (i, v) in framed[t * n..(t + 1) * n].iter_mut().enumerate() {
                *v = xp[t * hop + i] * self.window[i];
            }
        }
        let mut data = vec![0.0; 2 * frames * f];
        let (re, im) = data.split_at_mut(frames * f);
        gemm(false, false, frames, f, n, 1.0, &framed, &self.cos_a, 0.0, re);
        gemm(false, false, frames, f, n, -1.0, &framed, &self.sin_a, 0.0, im);
        Ok(ComplexSpectrogram { frames, bins: f, data })
    }

    /// Adjoint of [`stft_slice`](Self::stft_slice) for a signal of `len` samples.
    pub fn stft_adjoint(&self, dspec: &ComplexSpectrogram, len: usize) -> Vec<f64> {
        let (n, hop, f) = (self.cfg.n_fft, self.cfg.hop, self.cfg.bins());
        let frames = dspec.frames;
        let mut framed = vec![0.0; frames * n];
        gemm(false, true, frames, n, f, 1.0, dspec.real(), &self.cos_a, 0.0, &mut framed);
        gemm(false, true, frames, n, f, -1.0, dspec.imag(), &self.sin_a, 1.0, &mut framed);
        let pad = self.pad();
        let mut dxp = vec![0.0; len + 2 * pad];
        for t in 0..frames {
            for i in 0..n {
                dxp[t * hop + i] += framed[t * n + i] * self.window[i];
            }
        }
        if pad == 0 {
            dxp.truncate(len);
            return dxp;
        }
        let mut dx = vec![0.0; len];
        for (i, &g) in dxp.iter().enumerate() {
            dx[reflect(i as isize - pad as isize, len)] += g;
        }
        dx
    }

    /// Squared-window overlap-add envelope over the padded signal.
    fn window_envelope(&self, frames: usize) -> Vec<f64> {
        let (n, hop) = (self.cfg.n_fft, self.cfg.hop);
        let mut env = vec![0.0; (frames - 1) * hop + n];
        for t in 0..frames {
            for i in 0..n {
                env[t * hop + i] += self.window[i] * self.window[i];
            }
        }
        env
    }

    /// Inverse STFT by windowed overlap-add with squared-window
    /// normalization, trimmed or zero-padded to `out_len` samples.
    pub fn istft(&self, spec: &ComplexSpectrogram, out_len: usize) -> Result<Waveform> {
        let (n, hop, f) = (self.cfg.n_fft, self.cfg.hop, self.cfg.bins());
        if spec.bins != f {
            return Err(invalid!("spectrogram has {} bins, config expects {f}", spec.bins));
        }
        if spec.frames == 0 {
            return Err(invalid!("spectrogram has no frames"));
        }
        let frames = spec.frames;
        let mut framed = vec![0.0; frames * n];
        gemm(false, false, frames, n, f, 1.0, spec.real(), &self.cos_s, 0.0, &mut framed);
        gemm(false, false, frames, n, f, -1.0, spec.imag(), &self.sin_s, 1.0, &mut framed);
        let env = self.window_envelope(frames);
        let mut yp = vec![0.0; env.len()];
        for t in 0..frames {
            for i in 0..n {
                yp[t * hop + i] += framed[t * n + i] * self.window[i];
            }
        }
        let pad = self.pad();
        let out = (0..out_len)
            .map(|i| match yp.get(i + pad) {
                Some(&v) if env[i + pad] > 1e-11 => v / env[i + pad],
                _ => 0.0,
            })
            .collect();
        Ok(Waveform { samples: out })
    }

    /// Adjoint of [`istft`](Self::istft) for a spectrogram with `frames` frames.
    pub fn istft_adjoint(&self, dwave: &[f64], frames: usize) -> ComplexSpectrogram {
        let (n, hop, f) = (self.cfg.n_fft, self.cfg.hop, self.cfg.bins());
        let env = self.window_envelope(frames);
        let pad = self.pad();
        let mut g = vec![0.0; env.len()];
        for (i, &d) in dwave.iter().enumerate() {
            if i + pad < env.len() && env[i + pad] > 1e-11 {
                g[i + pad] = d / env[i + pad];
            }
        }
        let mut framed = vec![0.0; frames * n];
        for t in 0..frames {
            for i in 0..n {
                framed[t * n + i] = g[t * hop + i] * self.window[i];
            }
        }
        let mut out = ComplexSpectrogram::zeros(frames, f);
        let (re, im) = out.data.split_at_mut(frames * f);
        gemm(false, true, frames, f, n, 1.0, &framed, &self.cos_s, 0.0, re);
        gemm(false, true, frames, f, n, -1.0, &framed, &self.sin_s, 0.0, im);
        out
    }
}
