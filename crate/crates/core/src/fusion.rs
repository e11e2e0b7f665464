//! Injecting visual states into the audio network at one tap.

use alloc::vec;
use alloc::vec::Vec;

use crate::crn::{Tap, TapHook};
use crate::error::{invalid, shape_err};
use crate::nn::{join, Init, Linear, Mode, MultiHeadAttention, Param, Visit};
use crate::tensor::{gemm, FeatureMap};
use crate::{Result, Scalar};

/// How visual frames are brought to the audio frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Alignment {
    /// Nearest earlier visual frame.
    Upsample,
    /// Audio frames attend over all visual frames.
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionMethod {
    Add,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionConfig {
    pub location: Tap,
    pub align: Alignment,
    pub method: FusionMethod,
    pub heads: usize,
    pub attention_dim: usize,
}

impl FusionConfig {
    pub fn new(location: Tap, align: Alignment, method: FusionMethod) -> Self {
        Self { location, align, method, heads: 4, attention_dim: 128 }
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::new(Tap::B, Alignment::Upsample, FusionMethod::Add)
    }
}

/// Source visual frame for each audio frame: `floor(t * t_v / t_audio)`.
pub fn upsample_indices(t_v: usize, t_audio: usize) -> Result<Vec<usize>> {
    if t_v == 0 || t_audio == 0 {
        return Err(shape_err!("cannot align {t_v} visual frames to {t_audio} audio frames"));
    }
    Ok((0..t_audio).map(|t| t * t_v / t_audio).collect())
}

/// Repeat visual rows `(batch, t_v, dim)` onto `t_audio` frames.
pub fn upsample_align<S: Scalar>(states: &[S], batch: usize, t_v: usize, dim: usize, t_audio: usize) -> Result<Vec<S>> {
    if states.len() != batch * t_v * dim {
        return Err(shape_err!("{} values for visual states ({batch}, {t_v}, {dim})", states.len()));
    }
    let idx = upsample_indices(t_v, t_audio)?;
    let mut out = Vec::with_capacity(batch * t_audio * dim);
    for b in 0..batch {
        for &i in &idx {
            out.extend_from_slice(&states[(b * t_v + i) * dim..][..dim]);
        }
    }
    Ok(out)
}

/// Audio map rows `(batch * time, channels * freq)`, one query per frame.
pub fn frame_queries<S: Scalar>(x: &FeatureMap<S>) -> Vec<S> {
    let [b_n, c_n, t_n, f_n] = x.dims();
    let mut q = vec![S::zero(); b_n * t_n * c_n * f_n];
    for b in 0..b_n {
        for c in 0..c_n {
            for t in 0..t_n {
                let src = &x.data()[((b * c_n + c) * t_n + t) * f_n..][..f_n];
                q[(b * t_n + t) * c_n * f_n + c * f_n..][..f_n].copy_from_slice(src);
            }
        }
    }
    q
}

fn add_frame_queries<S: Scalar>(dx: &mut FeatureMap<S>, dq: &[S]) {
    let [b_n, c_n, t_n, f_n] = dx.dims();
    let data = dx.data_mut();
    for b in 0..b_n {
        for c in 0..c_n {
            for t in 0..t_n {
                let dst = &mut data[((b * c_n + c) * t_n + t) * f_n..][..f_n];
                for (d, &g) in dst.iter_mut().zip(&dq[(b * t_n + t) * c_n * f_n + c * f_n..]) {
                    *d += g;
                }
            }
        }
    }
}

/// Fusion block. Call [`Fusion::set_visual`] before each network forward,
/// and collect the visual gradient with [`Fusion::take_visual_grad`] after
/// the network backward.
///
/// Fusion convolutions start as the identity on the audio path, so a freshly
/// initialized block leaves the audio network's output unchanged.
#[derive(Debug, Clone)]
pub struct Fusion<S> {
    cfg: FusionConfig,
    channels: usize,
    freq: usize,
    visual_dim: usize,
    pub attention: Option<MultiHeadAttention<S>>,
    pub project: Linear<S>,
    /// `(channels, 1)` for add, `(channels, channels + 1)` for concat.
    pub weight: Param<S>,
    pub bias: Param<S>,
    visual: Vec<S>,
    visual_frames: usize,
    visual_grad: Vec<S>,
    cache_v: Vec<S>,
    cache_x: Option<FeatureMap<S>>,
    dims: [usize; 4],
}

impl<S: Scalar> Fusion<S> {
    /// `channels` and `freq` describe the audio map at the fusion tap.
    pub fn new(cfg: FusionConfig, channels: usize, freq: usize, visual_dim: usize) -> Result<Self> {
        if channels == 0 || freq == 0 || visual_dim == 0 {
            return Err(invalid!("fusion sizes must be positive"));
        }
        let (attention, aligned_dim) = match cfg.align {
            Alignment::Upsample => (None, visual_dim),
            Alignment::Attention => (
                Some(MultiHeadAttention::new(channels * freq, visual_dim, cfg.attention_dim, cfg.heads)?),
                cfg.attention_dim,
            ),
        };
        let (weight, bias) = match cfg.method {
            FusionMethod::Add => (Param::new(&[channels, 1], Init::Zeros), Param::new(&[channels], Init::Zeros)),
            FusionMethod::Concat => {
                let k = channels + 1;
                let mut w = vec![0.0; channels * k];
                for c in 0..channels {
                    w[c * k + c] = 1.0;
                }
                (Param::new(&[channels, k], Init::Values(w)), Param::new(&[channels], Init::Zeros))
            }
        };
        Ok(Self {
            cfg,
            channels,
            freq,
            visual_dim,
            attention,
            project: Linear::new(aligned_dim, freq),
            weight,
            bias,
            visual: Vec::new(),
            visual_frames: 0,
            visual_grad: Vec::new(),
            cache_v: Vec::new(),
            cache_x: None,
            dims: [0; 4],
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    /// Visual states `(batch, frames, visual_dim)` for the next forward.
    pub fn set_visual(&mut self, states: &[S], frames: usize) -> Result<()> {
        if frames == 0 || states.len() % (frames * self.visual_dim) != 0 {
            return Err(shape_err!("{} visual state values do not tile ({frames}, {})", states.len(), self.visual_dim));
        }
        self.visual = states.to_vec();
        self.visual_frames = frames;
        Ok(())
    }

    /// Gradient of the loss with respect to the states given to `set_visual`.
    pub fn take_visual_grad(&mut self) -> Vec<S> {
        core::mem::take(&mut self.visual_grad)
    }

    /// Visual map `(batch * time, freq)` after alignment and projection.
    fn visual_map(&mut self, x: &FeatureMap<S>) -> Result<Vec<S>> {
        let [b_n, _, t_n, _] = x.dims();
        if self.visual.len() != b_n * self.visual_frames * self.visual_dim {
            return Err(shape_err!("visual states do not match audio batch {b_n}"));
        }
        let aligned = match &mut self.attention {
            None => upsample_align(&self.visual, b_n, self.visual_frames, self.visual_dim, t_n)?,
            Some(att) => att.forward(&frame_queries(x), &self.visual, b_n, t_n, self.visual_frames)?,
        };
        Ok(self.project.forward(&aligned, b_n * t_n))
    }
}

impl<S: Scalar> TapHook<S> for Fusion<S> {
    fn tap(&self) -> Tap {
        self.cfg.location
    }

    fn forward(&mut self, x: FeatureMap<S>, _mode: Mode) -> Result<FeatureMap<S>> {
        let [b_n, c_n, t_n, f_n] = x.dims();
        if c_n != self.channels || f_n != self.freq {
            return Err(shape_err!("fusion expects ({}, {}) maps, got ({c_n}, {f_n})", self.channels, self.freq));
        }
        let v = self.visual_map(&x)?;
        let plane = t_n * f_n;
        let out = match self.cfg.method {
            FusionMethod::Add => {
                let mut out = x;
                let w = &self.weight.value;
                let bias = &self.bias.value;
                for b in 0..b_n {
                    let vb = &v[b * plane..(b + 1) * plane];
                    for c in 0..c_n {
                        for (o, &vv) in out.data_mut()[(b * c_n + c) * plane..][..plane].iter_mut().zip(vb) {
                            *o += w[c] * vv + bias[c];
                        }
                    }
                }
                out
            }
            FusionMethod::Concat => {
                let vm = FeatureMap::from_vec([b_n, 1, t_n, f_n], v.clone())?;
                let cat = FeatureMap::concat_channels(&x, &vm)?;
                let mut out = FeatureMap::zeros([b_n, c_n, t_n, f_n]);
                for b in 0..b_n {
                    let o = out.item_mut(b);
                    for c in 0..c_n {
                        o[c * plane..(c + 1) * plane].fill(self.bias.value[c]);
                    }
                    gemm(false, false, c_n, plane, c_n + 1, S::one(), &self.weight.value, cat.item(b), S::one(), o);
                }
                self.cache_x = Some(cat);
                out
            }
        };
        self.cache_v = v;
        self.dims = [b_n, c_n, t_n, f_n];
        Ok(out)
    }

    fn backward(&mut self, dy: FeatureMap<S>) -> FeatureMap<S> {
        let [b_n, c_n, t_n, f_n] = self.dims;
        let plane = t_n * f_n;
        let mut dv = vec![S::zero(); b_n * plane];
        let mut dx = match self.cfg.method {
            FusionMethod::Add => {
                for b in 0..b_n {
                    let vb = &self.cache_v[b * plane..(b + 1) * plane];
                    let dvb = &mut dv[b * plane..(b + 1) * plane];
                    for c in 0..c_n {
                        let g = &dy.data()[(b * c_n + c) * plane..][..plane];
                        let w = self.weight.value[c];
                        let mut dw = S::zero();
                        let mut db = S::zero();
                        for ((d, &gg), &vv) in dvb.iter_mut().zip(g).zip(vb) {
                            *d += w * gg;
                            dw += gg * vv;
                            db += gg;
                        }
                        self.weight.grad[c] += dw;
                        self.bias.grad[c] += db;
                    }
                }
                dy
            }
            FusionMethod::Concat => {
                let cat = self.cache_x.take().expect("backward without forward");
                let k = c_n + 1;
                let mut dcat = FeatureMap::zeros([b_n, k, t_n, f_n]);
                for b in 0..b_n {
                    let g = dy.item(b);
                    gemm(false, true, c_n, k, plane, S::one(), g, cat.item(b), S::one(), &mut self.weight.grad);
                    for c in 0..c_n {
                        self.bias.grad[c] += g[c * plane..(c + 1) * plane].iter().copied().sum();
                    }
                    gemm(true, false, k, plane, c_n, S::one(), &self.weight.value, g, S::zero(), dcat.item_mut(b));
                }
                let (dx, dvm) = dcat.split_channels(c_n);
                dv = dvm.into_vec();
                dx
            }
        };
        let daligned = self.project.backward(&dv);
        let (d, v_n) = (self.visual_dim, self.visual_frames);
        self.visual_grad = match &mut self.attention {
            None => {
                let mut g = vec![S::zero(); b_n * v_n * d];
                let idx = upsample_indices(v_n, t_n).expect("validated in forward");
                for b in 0..b_n {
                    for (t, &i) in idx.iter().enumerate() {
                        for (o, &s) in g[(b * v_n + i) * d..][..d].iter_mut().zip(&daligned[(b * t_n + t) * d..]) {
                            *o += s;
                        }
                    }
                }
                g
            }
            Some(att) => {
                let (dq, dkv) = att.backward(&daligned);
                add_frame_queries(&mut dx, &dq);
                dkv
            }
        };
        dx
    }
}

impl<S: Scalar> Visit<S> for Fusion<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        if let Some(att) = &mut self.attention {
            att.visit(&join(prefix, "attn"), f);
        }
        self.project.visit(&join(prefix, "project"), f);
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::rel_err;
    use crate::rng::stream;
    use rand::Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = stream(seed, "fusion-test");
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    fn randomize(f: &mut Fusion<f64>, seed: u64) {
        let mut r = stream(seed, "fusion-params");
        f.visit("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5)));
    }

    #[test]
    fn upsample_index_cases() {
        assert_eq!(upsample_indices(1, 4).unwrap(), alloc::vec![0, 0, 0, 0]);
        assert_eq!(upsample_indices(2, 4).unwrap(), alloc::vec![0, 0, 1, 1]);
        assert_eq!(upsample_indices(4, 4).unwrap(), alloc::vec![0, 1, 2, 3]);
        // 4 s of audio at 100 frames/s against 2 fps video
        let idx = upsample_indices(8, 401).unwrap();
        assert_eq!(idx[0], 0);
        assert_eq!(idx[400], 7);
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        assert!(upsample_indices(0, 4).is_err());
    }

    #[test]
    fn upsample_rows_are_copies() {
        let s = rand_vec(2 * 3 * 5, 1);
        let out = upsample_align(&s, 2, 3, 5, 7).unwrap();
        let idx = upsample_indices(3, 7).unwrap();
        for b in 0..2 {
            for t in 0..7 {
                assert_eq!(&out[(b * 7 + t) * 5..][..5], &s[(b * 3 + idx[t]) * 5..][..5]);
            }
        }
    }

    #[test]
    fn fresh_fusion_is_transparent() {
        let x = FeatureMap::from_vec([2, 3, 4, 5], rand_vec(120, 2)).unwrap();
        for align in [Alignment::Upsample, Alignment::Attention] {
            for method in [FusionMethod::Add, FusionMethod::Concat] {
                let cfg = FusionConfig { heads: 2, attention_dim: 4, ..FusionConfig::new(Tap::B, align, method) };
                let mut f = Fusion::<f64>::new(cfg, 3, 5, 6).unwrap();
                let mut r = stream(9, "proj");
                f.project.weight.value.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
                f.set_visual(&rand_vec(2 * 2 * 6, 3), 2).unwrap();
                assert_eq!(f.forward(x.clone(), Mode::Train).unwrap(), x);
            }
        }
    }

    #[test]
    fn add_with_unit_weight_adds_projection_to_every_channel() {
        let cfg = FusionConfig::new(Tap::C, Alignment::Upsample, FusionMethod::Add);
        let mut f = Fusion::<f64>::new(cfg, 2, 3, 4).unwrap();
        randomize(&mut f, 4);
        f.weight.value = alloc::vec![1.0, 1.0];
        f.bias.value = alloc::vec![0.0, 0.0];
        let states = rand_vec(2 * 4, 5);
        f.set_visual(&states, 2).unwrap();
        let x = FeatureMap::from_vec([1, 2, 4, 3], rand_vec(24, 6)).unwrap();
        let y = f.forward(x.clone(), Mode::Eval).unwrap();
        let v = f.project.apply(&upsample_align(&states, 1, 2, 4, 4).unwrap(), 4);
        for c in 0..2 {
            for i in 0..12 {
                assert!((y.data()[c * 12 + i] - x.data()[c * 12 + i] - v[i]).abs() < 1e-12);
            }
        }
    }

    fn check_grads(align: Alignment, method: FusionMethod) {
        let cfg = FusionConfig { heads: 2, attention_dim: 4, ..FusionConfig::new(Tap::B, align, method) };
        let mut f = Fusion::<f64>::new(cfg, 2, 3, 4).unwrap();
        randomize(&mut f, 7);
        let states = rand_vec(2 * 3 * 4, 8);
        let x = FeatureMap::from_vec([2, 2, 5, 3], rand_vec(60, 10)).unwrap();
        let w = rand_vec(60, 11);
        let loss = |f: &mut Fusion<f64>, x: &FeatureMap<f64>, s: &[f64]| -> f64 {
            f.set_visual(s, 3).unwrap();
            f.forward(x.clone(), Mode::Train).unwrap().data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        loss(&mut f, &x, &states);
        f.visit("", &mut |_, p| p.zero_grad());
        let dx = f.backward(FeatureMap::from_vec([2, 2, 5, 3], w.clone()).unwrap());
        let ds = f.take_visual_grad();
        let h = 1e-5;
        for i in 0..x.data().len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (loss(&mut f, &xp, &states) - loss(&mut f, &xm, &states)) / (2.0 * h);
            assert!(rel_err(fd, dx.data()[i]) < 1e-5, "dx[{i}] {fd} vs {}", dx.data()[i]);
        }
        for i in 0..states.len() {
            let (mut sp, mut sm) = (states.clone(), states.clone());
            sp[i] += h;
            sm[i] -= h;
            let fd = (loss(&mut f, &x, &sp) - loss(&mut f, &x, &sm)) / (2.0 * h);
            assert!(rel_err(fd, ds[i]) < 1e-5, "ds[{i}] {fd} vs {}", ds[i]);
        }
        let mut grads = Vec::new();
        f.visit("", &mut |n, p| grads.push((alloc::string::String::from(n), p.grad.clone())));
        for (name, g) in grads {
            for i in 0..g.len() {
                let bump = |d: f64, f: &mut Fusion<f64>| {
                    f.visit("", &mut |n, p| {
                        if n == name {
                            p.value[i] += d
                        }
                    })
                };
                bump(h, &mut f);
                let lp = loss(&mut f, &x, &states);
                bump(-2.0 * h, &mut f);
                let lm = loss(&mut f, &x, &states);
                bump(h, &mut f);
                let fd = (lp - lm) / (2.0 * h);
                assert!(rel_err(fd, g[i]) < 1e-5, "{name}[{i}] {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn gradients_upsample_add() {
        check_grads(Alignment::Upsample, FusionMethod::Add);
    }
    #[test]
    fn gradients_upsample_concat() {
        check_grads(Alignment::Upsample, FusionMethod::Concat);
    }
    #[test]
    fn gradients_attention_add() {
        check_grads(Alignment::Attention, FusionMethod::Add);
    }
    #[test]
    fn gradients_attention_concat() {
        check_grads(Alignment::Attention, FusionMethod::Concat);
    }
}
