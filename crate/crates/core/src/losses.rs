//! Training criteria: time-domain L1, sub-band weighted STFT magnitude
//! loss, SI-SDR, their weighted sum, multilabel BCE and the multi-task
//! total. Every differentiable term comes with its gradient.
//!
//! Reductions are means, so magnitudes do not depend on clip length. The
//! SI-SDR term enters the enhancement loss negated (higher SI-SDR is better).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::signal::{magnitude, magnitude_backward, Magnitude, Stft};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Time-domain L1 weight.
    pub lambda1: f64,
    /// Weighted STFT loss weight.
    pub lambda2: f64,
    /// Weight of the negated SI-SDR.
    pub lambda3: f64,
    /// Sub-band weights, lowest band first.
    pub band_weights: [f64; 4],
    /// Enhancement task weight.
    pub alpha1: f64,
    /// AED task weight.
    pub alpha2: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 22.62,
            lambda3: 0.001,
            band_weights: [0.1, 1.0, 1.5, 1.5],
            alpha1: 1.0,
            alpha2: 50.0,
            epsilon: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.alpha1, self.alpha2, self.epsilon];
        if all.iter().chain(&self.band_weights).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid!("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(invalid!("empty signal"));
    }
    Ok(())
}

/// Mean absolute sample difference.
pub fn l1_time(clean: &[f64], est: &[f64]) -> Result<f64> {
    same_len(clean, est)?;
    Ok(clean.iter().zip(est).map(|(a, b)| (a - b).abs()).sum::<f64>() / clean.len() as f64)
}

pub fn l1_time_grad(clean: &[f64], est: &[f64]) -> Vec<f64> {
    let n = clean.len() as f64;
    clean.iter().zip(est).map(|(c, e)| sign(e - c) / n).collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Contiguous low-to-high band sizes; the first bands absorb the remainder
/// (161 bins split as 41, 40, 40, 40).
pub fn band_sizes(bins: usize) -> [usize; 4] {
    let (base, rem) = (bins / 4, bins % 4);
    core::array::from_fn(|i| base + usize::from(i < rem))
}

/// For each bin, its band index.
fn band_of(bins: usize) -> Vec<usize> {
    band_sizes(bins).iter().enumerate().flat_map(|(k, &n)| core::iter::repeat_n(k, n)).collect()
}

/// `sum_k w_k * mean over band k of |S - S_est|`.
pub fn weighted_stft_loss(clean: &Magnitude, est: &Magnitude, weights: &[f64; 4]) -> Result<f64> {
    if clean.frames != est.frames || clean.bins != est.bins {
        return Err(invalid!(
            "magnitude shapes differ: ({}, {}) vs ({}, {})",
            clean.frames,
            clean.bins,
            est.frames,
            est.bins
        ));
    }
    if clean.bins < 4 || clean.frames == 0 {
        return Err(invalid!("need at least one frame and four bins"));
    }
    let sizes = band_sizes(clean.bins);
    let bands = band_of(clean.bins);
    let mut sums = [0.0f64; 4];
    for t in 0..clean.frames {
        for (f, &k) in bands.iter().enumerate() {
            let i = t * clean.bins + f;
            sums[k] += (clean.data[i] - est.data[i]).abs();
        }
    }
    Ok((0..4).map(|k| weights[k] * sums[k] / (sizes[k] * clean.frames) as f64).sum())
}

/// Gradient of [`weighted_stft_loss`] with respect to `est`.
pub fn weighted_stft_grad(clean: &Magnitude, est: &Magnitude, weights: &[f64; 4]) -> Vec<f64> {
    let sizes = band_sizes(clean.bins);
    let bands = band_of(clean.bins);
    let mut g = vec![0.0; est.data.len()];
    for t in 0..clean.frames {
        for (f, &k) in bands.iter().enumerate() {
            let i = t * clean.bins + f;
            g[i] = weights[k] * sign(est.data[i] - clean.data[i]) / (sizes[k] * clean.frames) as f64;
        }
    }
    g
}

struct SiSdrParts {
    alpha: f64,
    ref_energy: f64,
    num: f64,
    den: f64,
}

fn si_sdr_parts(reference: &[f64], est: &[f64], eps: f64) -> Result<SiSdrParts> {
    same_len(reference, est)?;
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy == 0.0 {
        return Err(Error::InvalidReference);
    }
    let dot: f64 = reference.iter().zip(est).map(|(a, b)| a * b).sum();
    let alpha = dot / (ref_energy + eps);
    let err: f64 = reference
        .iter()
        .zip(est)
        .map(|(s, e)| {
            let d = alpha * s - e;
            d * d
        })
        .sum();
    Ok(SiSdrParts { alpha, ref_energy, num: alpha * alpha * ref_energy + eps, den: err + eps })
}

/// Scale-invariant SDR in dB, with `eps` capping the perfect case.
pub fn si_sdr(reference: &[f64], est: &[f64], eps: f64) -> Result<f64> {
    let p = si_sdr_parts(reference, est, eps)?;
    Ok(10.0 * libm::log10(p.num / p.den))
}

/// Gradient of [`si_sdr`] with respect to `est`.
pub fn si_sdr_grad(reference: &[f64], est: &[f64], eps: f64) -> Result<Vec<f64>> {
    let p = si_sdr_parts(reference, est, eps)?;
    let k = 10.0 / core::f64::consts::LN_10;
    // d alpha / d est = reference / (|s|^2 + eps)
    let inv = 1.0 / (p.ref_energy + eps);
    let resid_dot_ref: f64 = reference.iter().zip(est).map(|(s, e)| (p.alpha * s - e) * s).sum();
    Ok(reference
        .iter()
        .zip(est)
        .map(|(&s, &e)| {
            let dalpha = s * inv;
            let dnum = 2.0 * p.alpha * p.ref_energy * dalpha;
            let dden = 2.0 * (resid_dot_ref * dalpha - (p.alpha * s - e));
            k * (dnum / p.num - dden / p.den)
        })
        .collect())
}

/// Components of the enhancement loss for one example.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NsTerms {
    pub l1: f64,
    pub wstft: f64,
    /// SI-SDR in dB (not negated).
    pub si_sdr: f64,
    pub total: f64,
}

impl NsTerms {
    fn combine(l1: f64, wstft: f64, si_sdr: f64, w: &LossWeights) -> Self {
        Self { l1, wstft, si_sdr, total: w.lambda1 * l1 + w.lambda2 * wstft + w.lambda3 * (-si_sdr) }
    }
}

/// `lambda1 * L1 + lambda2 * W-STFT + lambda3 * (-SI-SDR)`.
pub fn ns_loss(stft: &Stft, clean: &[f64], est: &[f64], w: &LossWeights) -> Result<NsTerms> {
    let l1 = l1_time(clean, est)?;
    let mc = magnitude(&stft.stft_slice(clean)?);
    let me = magnitude(&stft.stft_slice(est)?);
    let wstft = weighted_stft_loss(&mc, &me, &w.band_weights)?;
    let s = si_sdr(clean, est, w.epsilon)?;
    Ok(NsTerms::combine(l1, wstft, s, w))
}

/// [`ns_loss`] together with its gradient with respect to `est`.
pub fn ns_loss_grad(stft: &Stft, clean: &[f64], est: &[f64], w: &LossWeights) -> Result<(NsTerms, Vec<f64>)> {
    let l1 = l1_time(clean, est)?;
    let mc = magnitude(&stft.stft_slice(clean)?);
    let spec_est = stft.stft_slice(est)?;
    let me = magnitude(&spec_est);
    let wstft = weighted_stft_loss(&mc, &me, &w.band_weights)?;
    let s = si_sdr(clean, est, w.epsilon)?;

    let mut grad = l1_time_grad(clean, est);
    grad.iter_mut().for_each(|g| *g *= w.lambda1);
    if w.lambda2 != 0.0 {
        let dmag = weighted_stft_grad(&mc, &me, &w.band_weights);
        let dspec = magnitude_backward(&spec_est, &dmag);
        for (g, d) in grad.iter_mut().zip(stft.stft_adjoint(&dspec, est.len())) {
            *g += w.lambda2 * d;
        }
    }
    if w.lambda3 != 0.0 {
        for (g, d) in grad.iter_mut().zip(si_sdr_grad(clean, est, w.epsilon)?) {
            *g -= w.lambda3 * d;
        }
    }
    Ok((NsTerms::combine(l1, wstft, s, w), grad))
}

fn check_targets(logits: &[f64], targets: &[f64]) -> Result<()> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(invalid!("{} logits vs {} targets", logits.len(), targets.len()));
    }
    if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(invalid!("AED targets must be 0 or 1"));
    }
    Ok(())
}

/// Mean over labels of binary cross-entropy on logits, in the stable
/// `max(z, 0) - z y + ln(1 + e^-|z|)` form.
pub fn bce_multilabel(logits: &[f64], targets: &[f64]) -> Result<f64> {
    check_targets(logits, targets)?;
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs())))
        .sum();
    Ok(sum / logits.len() as f64)
}

pub fn bce_multilabel_grad(logits: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    check_targets(logits, targets)?;
    let n = logits.len() as f64;
    Ok(logits.iter().zip(targets).map(|(&z, &y)| (crate::tensor::sigmoid(z) - y) / n).collect())
}

/// `alpha1 * ns + alpha2 * aed`.
pub fn total_mtl_loss(ns: f64, aed: f64, w: &LossWeights) -> f64 {
    w.alpha1 * ns + w.alpha2 * aed
}
