//! Finite-difference verification of the model's backward pass.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;

use crate::model::{ModelConfig, ModelParams};
use crate::nn::{Mode, ParamKind, Visit};
use crate::rng::stream;
use crate::tensor::FeatureMap;
use crate::visual::VisualFeatureSequence;
use crate::Result;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_param: String,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Absolute floor on the denominator of the relative error.
    pub floor: f64,
    /// Check every `stride`-th coordinate of each tensor (1 = all).
    pub stride: usize,
    pub batch: usize,
    pub frames: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4, floor: 1e-5, stride: 1, batch: 2, frames: 8 }
    }
}

/// Compares analytic gradients against fourth-order central differences
/// for a random linear functional of the mask (and AED logits), in train mode.
///
/// Fusion parameters are perturbed away from their transparent start so
/// every path carries gradient.
pub fn check_model(cfg: ModelConfig, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let mut m = ModelParams::<f64>::initialized(cfg, seed)?;
    let mut r = stream(seed, "gradcheck");
    if let Some(f) = &mut m.fusion {
        f.visit("", &mut |_, p| p.value.iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3)));
    }
    let freq = m.config().crn.freq_bins;
    let n = opts.batch * 2 * opts.frames * freq;
    let spec = FeatureMap::from_vec([opts.batch, 2, opts.frames, freq], (0..n).map(|_| r.random_range(-1.0..1.0)).collect())?;
    let vis: Vec<VisualFeatureSequence> = match m.config().visual {
        Some(vc) => (0..opts.batch)
            .map(|_| {
                let frames = opts.frames.div_ceil(4);
                let data = (0..frames * vc.input_dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
                VisualFeatureSequence::new(frames, vc.input_dim, data, 2.0, false)
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let refs: Vec<&VisualFeatureSequence> = vis.iter().collect();
    let visual = (!refs.is_empty()).then_some(refs.as_slice());
    let wm: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels = m.aed.as_ref().map_or(0, |h| h.num_labels());
    let wl: Vec<f64> = (0..opts.batch * labels).map(|_| r.random_range(-1.0..1.0)).collect();

    let loss = |m: &mut ModelParams<f64>| -> Result<f64> {
        let out = m.forward(&spec, visual, Mode::Train)?;
        let mut l: f64 = out.mask.data().iter().zip(&wm).map(|(x, w)| x * w).sum();
        if let Some(z) = &out.aed_logits {
            l += z.iter().zip(&wl).map(|(x, w)| x * w).sum::<f64>();
        }
        Ok(l)
    };
    loss(&mut m)?;
    m.zero_grad();
    m.backward(&FeatureMap::from_vec(spec.dims(), wm.clone())?, (labels > 0).then_some(wl.as_slice()));
    let mut grads = Vec::new();
    m.visit("", &mut |name, p| {
        if p.kind == ParamKind::Trainable {
            grads.push((name.to_string(), p.grad.clone()));
        }
    });

    let h = opts.step;
    let mut report = GradCheckReport { checked: 0, worst: 0.0, worst_param: String::new(), failures: 0 };
    for (name, g) in &grads {
        for i in (0..g.len()).step_by(opts.stride.max(1)) {
            let set = |m: &mut ModelParams<f64>, v: Option<f64>| {
                let mut old = 0.0;
                m.visit("", &mut |n, p| {
                    if n == name {
                        old = p.value[i];
                        if let Some(v) = v {
                            p.value[i] = v;
                        }
                    }
                });
                old
            };
            let x = set(&mut m, None);
            let mut at = |d: f64| -> Result<f64> {
                set(&mut m, Some(x + d));
                let l = loss(&mut m);
                set(&mut m, Some(x));
                l
            };
            // Fourth-order central stencil: the plain two-point rule leaves
            // O(h^2) curvature error that swamps gradients near the floor.
            let fd = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            let e = relative_error(fd, g[i], opts.floor);
            report.checked += 1;
            if e > opts.tolerance {
                report.failures += 1;
            }
            if e > report.worst {
                report.worst = e;
                report.worst_param = alloc::format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
