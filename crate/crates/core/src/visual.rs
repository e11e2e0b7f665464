//! Visual pathway: a bidirectional LSTM over precomputed per-frame (or
//! per-video) features, temporal mean pooling, and the AED head.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::nn::{join, Linear, LstmStack, Param, Visit};
use crate::{Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisualConfig {
    /// Feature dimension of the incoming sequences.
    pub input_dim: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Number of acoustic-event labels.
    pub num_labels: usize,
}

impl VisualConfig {
    pub fn new(input_dim: usize, num_labels: usize) -> Self {
        Self { input_dim, lstm_layers: 2, lstm_hidden: 128, num_labels }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.lstm_layers == 0 || self.lstm_hidden == 0 || self.num_labels == 0 {
            return Err(invalid!("visual sizes must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// Precomputed visual embeddings, `frames x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
    /// Frames per second.
    pub frame_rate: f64,
    /// A single embedding for the whole clip.
    pub per_video: bool,
}

impl VisualFeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>, frame_rate: f64, per_video: bool) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(shape_err!("visual sequence needs frames >= 1 and dim >= 1"));
        }
        if data.len() != frames * dim {
            return Err(shape_err!("{} values for ({frames}, {dim}) features", data.len()));
        }
        if per_video && frames != 1 {
            return Err(shape_err!("per-video features must have exactly one frame"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite visual feature"));
        }
        Ok(Self { frames, dim, data, frame_rate, per_video })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Multilabel acoustic-event targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AedLabels {
    active: Vec<bool>,
}

impl AedLabels {
    pub fn from_indices(indices: &[usize], num_labels: usize) -> Result<Self> {
        let mut active = vec![false; num_labels];
        for &i in indices {
            *active.get_mut(i).ok_or_else(|| invalid!("label {i} >= {num_labels}"))? = true;
        }
        Ok(Self { active })
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }
    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
    pub fn active(&self) -> &[bool] {
        &self.active
    }
    pub fn as_targets(&self) -> Vec<f64> {
        self.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }
}

/// Output of [`VisualEncoder::forward`] for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualStates<S> {
    pub batch: usize,
    pub frames: usize,
    pub dim: usize,
    /// (batch * frames, dim)
    pub states: Vec<S>,
    /// (batch, dim), temporal mean of `states`.
    pub pooled: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct VisualEncoder<S> {
    cfg: VisualConfig,
    lstm: LstmStack<S>,
    shape: (usize, usize),
}

impl<S: Scalar> VisualEncoder<S> {
    pub fn new(cfg: VisualConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, lstm: LstmStack::new(cfg.input_dim, cfg.lstm_hidden, cfg.lstm_layers), shape: (0, 0) })
    }

    pub fn config(&self) -> &VisualConfig {
        &self.cfg
    }

    /// Stacks equally long sequences into a (batch, frames, dim) buffer.
    pub fn batch_input(&self, seqs: &[&VisualFeatureSequence]) -> Result<(Vec<S>, usize)> {
        let frames = seqs.first().map_or(0, |s| s.frames());
        let mut x = Vec::with_capacity(seqs.len() * frames * self.cfg.input_dim);
        for s in seqs {
            if s.dim() != self.cfg.input_dim {
                return Err(shape_err!("visual features have dim {}, model expects {}", s.dim(), self.cfg.input_dim));
            }
            if s.frames() != frames {
                return Err(shape_err!("visual sequences in a batch must share a length"));
            }
            x.extend(s.data().iter().map(|&v| S::of(v as f64)));
        }
        Ok((x, frames))
    }

    pub fn forward(&mut self, x: &[S], batch: usize, frames: usize) -> Result<VisualStates<S>> {
        if frames == 0 || x.len() != batch * frames * self.cfg.input_dim {
            return Err(shape_err!("visual input of {} values for batch {batch}, frames {frames}", x.len()));
        }
        let states = self.lstm.forward(x, batch, frames);
        let dim = self.cfg.state_dim();
        let mut pooled = vec![S::zero(); batch * dim];
        let inv = S::one() / S::of(frames as f64);
        for b in 0..batch {
            let p = &mut pooled[b * dim..(b + 1) * dim];
            for t in 0..frames {
                for (o, &v) in p.iter_mut().zip(&states[(b * frames + t) * dim..]) {
                    *o += v;
                }
            }
            p.iter_mut().for_each(|v| *v *= inv);
        }
        self.shape = (batch, frames);
        Ok(VisualStates { batch, frames, dim, states, pooled })
    }

    /// Gradients with respect to the states and the pooled vector; either
    /// may be absent when it does not reach the loss.
    pub fn backward(&mut self, dstates: Option<&[S]>, dpooled: Option<&[S]>) {
        let (batch, frames) = self.shape;
        let dim = self.cfg.state_dim();
        let mut d = dstates.map_or_else(|| vec![S::zero(); batch * frames * dim], <[S]>::to_vec);
        if let Some(dp) = dpooled {
            let inv = S::one() / S::of(frames as f64);
            for b in 0..batch {
                for t in 0..frames {
                    for (o, &g) in d[(b * frames + t) * dim..][..dim].iter_mut().zip(&dp[b * dim..(b + 1) * dim]) {
                        *o += g * inv;
                    }
                }
            }
        }
        self.lstm.backward(&d);
    }
}

impl<S: Scalar> Visit<S> for VisualEncoder<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.lstm.visit(&join(prefix, "rnn"), f);
    }
}

/// Linear map from pooled visual states to AED logits.
#[derive(Debug, Clone)]
pub struct AedHead<S> {
    pub linear: Linear<S>,
}

impl<S: Scalar> AedHead<S> {
    pub fn new(state_dim: usize, num_labels: usize) -> Self {
        Self { linear: Linear::new(state_dim, num_labels) }
    }

    pub fn num_labels(&self) -> usize {
        self.linear.out_dim
    }

    pub fn logits(&self, pooled: &[S], batch: usize) -> Vec<S> {
        self.linear.apply(pooled, batch)
    }

    pub fn forward(&mut self, pooled: &[S], batch: usize) -> Vec<S> {
        self.linear.forward(pooled, batch)
    }

    pub fn backward(&mut self, dlogits: &[S]) -> Vec<S> {
        self.linear.backward(dlogits)
    }
}

impl<S: Scalar> Visit<S> for AedHead<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.linear.visit(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn randomize<L: Visit<f64>>(l: &mut L, seed: u64) {
        let mut r = stream(seed, "visual");
        l.visit("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = r.random_range(-0.3..0.3)));
    }

    fn seq(frames: usize, dim: usize, seed: u64) -> VisualFeatureSequence {
        let mut r = stream(seed, "feat");
        VisualFeatureSequence::new(frames, dim, (0..frames * dim).map(|_| r.random_range(-1.0..1.0)).collect(), 2.0, false)
            .unwrap()
    }

    #[test]
    fn single_frame_pool_equals_state() {
        let mut enc = VisualEncoder::<f64>::new(VisualConfig { input_dim: 6, lstm_layers: 2, lstm_hidden: 5, num_labels: 3 }).unwrap();
        randomize(&mut enc, 1);
        let s = seq(1, 6, 2);
        let (x, frames) = enc.batch_input(&[&s]).unwrap();
        let out = enc.forward(&x, 1, frames).unwrap();
        assert_eq!(out.states.len(), 10);
        assert_eq!(out.pooled, out.states);
    }

    #[test]
    fn zero_parameters_and_input_give_zero_states() {
        let mut enc = VisualEncoder::<f64>::new(VisualConfig::new(4, 2)).unwrap();
        let out = enc.forward(&[0.0; 3 * 4], 1, 3).unwrap();
        assert!(out.states.iter().chain(&out.pooled).all(|&v| v == 0.0));
    }

    #[test]
    fn pooled_is_column_mean_for_default_width() {
        let mut enc = VisualEncoder::<f64>::new(VisualConfig::new(8, 4)).unwrap();
        randomize(&mut enc, 3);
        let s = seq(5, 8, 4);
        let (x, frames) = enc.batch_input(&[&s]).unwrap();
        let out = enc.forward(&x, 1, frames).unwrap();
        assert_eq!(out.states.len(), 5 * 256);
        for d in 0..256 {
            let mean = (0..5).map(|t| out.states[t * 256 + d]).sum::<f64>() / 5.0;
            assert!((mean - out.pooled[d]).abs() < 1e-6);
        }
    }

    #[test]
    fn aed_logits_cases() {
        let mut head = AedHead::<f64>::new(4, 3);
        assert_eq!(head.logits(&[1.0, -2.0, 3.0, 0.5], 1), alloc::vec![0.0; 3]);
        // rows selecting coordinates 2, 0, 3
        head.linear.weight.value = alloc::vec![0., 0., 1., 0., 1., 0., 0., 0., 0., 0., 0., 1.];
        assert_eq!(head.logits(&[1.0, -2.0, 3.0, 0.5], 1), alloc::vec![3.0, 1.0, 0.5]);
        randomize(&mut head, 5);
        let p = [0.2, -0.4, 0.9, 0.1];
        let got = head.logits(&p, 1);
        for k in 0..3 {
            let want: f64 = (0..4).map(|i| head.linear.weight.value[k * 4 + i] * p[i]).sum::<f64>() + head.linear.bias.value[k];
            assert!((got[k] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn labels_and_sequence_validation() {
        let l = AedLabels::from_indices(&[0, 2], 4).unwrap();
        assert_eq!(l.as_targets(), alloc::vec![1.0, 0.0, 1.0, 0.0]);
        assert!(AedLabels::from_indices(&[4], 4).is_err());
        assert!(VisualFeatureSequence::new(2, 2, alloc::vec![0.0; 4], 2.0, true).is_err());
        assert!(VisualFeatureSequence::new(1, 2, alloc::vec![0.0; 3], 2.0, false).is_err());
    }
}
