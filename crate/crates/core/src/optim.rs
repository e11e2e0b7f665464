//! Adam with global-norm gradient clipping.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{ModelParams, Tensor, TensorTable};
use crate::nn::Visit;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clip the global gradient norm to this value; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
    /// Updates applied to this tensor; frozen tensors do not advance.
    t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub cfg: AdamConfig,
    state: BTreeMap<String, Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, state: BTreeMap::new() }
    }

    /// Global L2 norm of the gradients the optimizer would apply.
    pub fn grad_norm(model: &mut ModelParams<S>) -> f64 {
        let mut sq = 0.0;
        let trainable = model.trainable_filter();
        model.visit("", &mut |n, p| {
            if trainable(n, p.kind) {
                sq += p.grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>();
            }
        });
        libm::sqrt(sq)
    }

    /// One update. Returns the gradient norm before clipping; a non-finite
    /// norm is reported as divergence and leaves the model untouched.
    pub fn step(&mut self, model: &mut ModelParams<S>, step: u64) -> Result<f64> {
        let norm = Self::grad_norm(model);
        if !norm.is_finite() {
            return Err(Error::Diverged { step, what: "gradient norm".into() });
        }
        let scale = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let cfg = self.cfg;
        let trainable = model.trainable_filter();
        let state = &mut self.state;
        model.visit("", &mut |n, p| {
            if !trainable(n, p.kind) {
                return;
            }
            let st = state
                .entry(n.to_string())
                .or_insert_with(|| Moments { m: vec![S::zero(); p.len()], v: vec![S::zero(); p.len()], t: 0 });
            st.t += 1;
            let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
            let c1 = 1.0 - libm::pow(cfg.beta1, st.t as f64);
            let c2 = 1.0 - libm::pow(cfg.beta2, st.t as f64);
            let step_size = S::of(cfg.lr * libm::sqrt(c2) / c1);
            let eps = S::of(cfg.eps * libm::sqrt(c2));
            let sc = S::of(scale);
            for i in 0..p.len() {
                let g = p.grad[i] * sc;
                st.m[i] = b1 * st.m[i] + (S::one() - b1) * g;
                st.v[i] = b2 * st.v[i] + (S::one() - b2) * g * g;
                p.value[i] -= step_size * st.m[i] / (st.v[i].sqrt() + eps);
            }
        });
        Ok(norm)
    }

    /// Moments as tensors named `adam.m.<param>`, `adam.v.<param>` and the
    /// per-tensor update count as `adam.t.<param>`.
    pub fn export(&self, shapes: &TensorTable) -> TensorTable {
        let mut t = TensorTable::new();
        for (name, st) in &self.state {
            let shape = shapes.get(name).map_or_else(|| vec![st.m.len()], |x| x.shape.clone());
            let conv = |v: &[S]| v.iter().map(|x| x.f64() as f32).collect();
            t.insert(alloc::format!("adam.m.{name}"), Tensor { shape: shape.clone(), data: conv(&st.m) });
            t.insert(alloc::format!("adam.v.{name}"), Tensor { shape, data: conv(&st.v) });
            // counts fit exactly in f32 up to 2^24 steps
            t.insert(alloc::format!("adam.t.{name}"), Tensor { shape: vec![1], data: vec![st.t as f32] });
        }
        t
    }

    pub fn import(cfg: AdamConfig, table: &TensorTable) -> Result<Self> {
        let mut state = BTreeMap::new();
        for (key, m) in table.range(String::from("adam.m.")..) {
            let Some(name) = key.strip_prefix("adam.m.") else { break };
            let get = |kind: &str| {
                table.get(&alloc::format!("adam.{kind}.{name}")).ok_or_else(|| Error::Format(alloc::format!("missing adam.{kind}.{name}")))
            };
            let v = get("v")?;
            let t = get("t")?;
            if v.data.len() != m.data.len() || t.data.len() != 1 {
                return Err(Error::Format(alloc::format!("inconsistent optimizer state for {name}")));
            }
            let conv = |x: &[f32]| x.iter().map(|&a| S::of(a as f64)).collect();
            state.insert(name.to_string(), Moments { m: conv(&m.data), v: conv(&v.data), t: t.data[0] as u64 });
        }
        Ok(Self { cfg, state })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::CrnConfig;
    use crate::model::{ModelConfig, Subset};
    use crate::visual::VisualConfig;
    use crate::fusion::FusionConfig;

    fn model() -> ModelParams<f64> {
        let vc = VisualConfig { input_dim: 4, lstm_layers: 1, lstm_hidden: 4, num_labels: 2 };
        let cfg = ModelConfig::audio_visual(CrnConfig::with_ladder(33, &[4, 8], 1, 8), vc, FusionConfig::default(), true);
        ModelParams::initialized(cfg, 1).unwrap()
    }

    fn set_grads(m: &mut ModelParams<f64>, g: f64) {
        m.visit("", &mut |_, p| p.grad.iter_mut().for_each(|x| *x = g));
    }

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut m = model();
        let before = m.export();
        set_grads(&mut m, 0.01);
        let mut opt = Adam::new(AdamConfig { clip_norm: None, ..AdamConfig::default() });
        opt.step(&mut m, 0).unwrap();
        let after = m.export();
        for (name, t) in &after {
            let moved = t.data.iter().zip(&before[name].data).all(|(a, b)| ((b - a) as f64 - 1e-3).abs() < 1e-6);
            if name.contains("running_") {
                assert_eq!(t, &before[name], "buffer {name} changed");
            } else {
                assert!(moved, "{name}");
            }
        }
    }

    #[test]
    fn frozen_subset_is_untouched() {
        let mut m = model();
        m.set_frozen(Subset::Visual, true);
        let before = m.export();
        set_grads(&mut m, 0.5);
        Adam::new(AdamConfig::default()).step(&mut m, 0).unwrap();
        let after = m.export();
        for (name, t) in &after {
            if name.starts_with("visual.") {
                assert_eq!(t, &before[name]);
            }
        }
        assert_ne!(after["crn.proj.weight"], before["crn.proj.weight"]);
    }

    #[test]
    fn clipping_scales_to_the_norm() {
        let mut m = model();
        set_grads(&mut m, 1.0);
        let norm = Adam::grad_norm(&mut m);
        assert!((norm - libm::sqrt(m.num_trainable() as f64)).abs() < 1e-9);
        let mut opt = Adam::new(AdamConfig::default());
        assert_eq!(opt.step(&mut m, 0).unwrap(), norm);
        // clipped moments equal the unclipped gradient scaled by 5 / norm
        let t = opt.export(&m.export());
        let m0 = t["adam.m.crn.proj.weight"].data[0] as f64;
        assert!((m0 - 0.1 * 5.0 / norm).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut m = model();
        set_grads(&mut m, f64::NAN);
        let before = m.export();
        assert!(matches!(Adam::new(AdamConfig::default()).step(&mut m, 3), Err(Error::Diverged { step: 3, .. })));
        assert_eq!(before, m.export());
    }

    #[test]
    fn state_round_trips() {
        let mut m = model();
        set_grads(&mut m, 0.25);
        let mut opt = Adam::<f32>::new(AdamConfig::default());
        let mut m32 = ModelParams::<f32>::initialized(m.config().clone(), 1).unwrap();
        m32.visit("", &mut |_, p| p.grad.iter_mut().for_each(|x| *x = 0.25));
        opt.step(&mut m32, 0).unwrap();
        let t = opt.export(&m32.export());
        assert_eq!(Adam::<f32>::import(AdamConfig::default(), &t).unwrap(), opt);
    }
}
