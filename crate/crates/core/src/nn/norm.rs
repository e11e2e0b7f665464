use alloc::vec::Vec;

use super::{join, Init, Mode, Param, Visit};
use crate::error::shape_err;
use crate::tensor::FeatureMap;
use crate::{Result, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over (batch, time, frequency).
#[derive(Debug, Clone)]
pub struct BatchNorm2d<S> {
    pub channels: usize,
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Param<S>,
    pub running_var: Param<S>,
    xhat: Vec<S>,
    inv_std: Vec<S>,
    mode: Mode,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(&[channels], Init::Ones),
            beta: Param::new(&[channels], Init::Zeros),
            running_mean: Param::buffer(&[channels], Init::Zeros),
            running_var: Param::buffer(&[channels], Init::Ones),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            mode: Mode::Eval,
        }
    }

    pub fn forward(&mut self, x: &FeatureMap<S>, mode: Mode) -> Result<FeatureMap<S>> {
        let [b, c, t, f] = x.dims();
        if c != self.channels {
            return Err(shape_err!("batch norm over {} channels got {:?}", self.channels, x.dims()));
        }
        let plane = t * f;
        let count = b * plane;
        let eps = S::of(BN_EPS);
        self.mode = mode;
        self.inv_std.clear();
        self.xhat.clear();
        self.xhat.resize(x.data().len(), S::zero());
        let mut y = FeatureMap::zeros(x.dims());
        for ch in 0..c {
            let (mean, inv) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for n in 0..b {
                        sum += x.item(n)[ch * plane..(ch + 1) * plane].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for n in 0..b {
                        sq += x.item(n)[ch * plane..(ch + 1) * plane]
                            .iter()
                            .map(|v| {
                                let d = v.f64() - mean;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    let var = sq / count as f64;
                    let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                    let m = S::of(BN_MOMENTUM);
                    let rm = &mut self.running_mean.value[ch];
                    *rm = (S::one() - m) * *rm + m * S::of(mean);
                    let rv = &mut self.running_var.value[ch];
                    *rv = (S::one() - m) * *rv + m * S::of(unbiased);
                    (S::of(mean), S::one() / (S::of(var) + eps).sqrt())
                }
                Mode::Eval => {
                    (self.running_mean.value[ch], S::one() / (self.running_var.value[ch] + eps).sqrt())
                }
            };
            self.inv_std.push(inv);
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for n in 0..b {
                let off = (n * c + ch) * plane;
                let src = &x.item(n)[ch * plane..(ch + 1) * plane];
                let xh = &mut self.xhat[off..off + plane];
                for (h, &s) in xh.iter_mut().zip(src) {
                    *h = (s - mean) * inv;
                }
                let dst = &mut y.item_mut(n)[ch * plane..(ch + 1) * plane];
                for (d, &h) in dst.iter_mut().zip(xh.iter()) {
                    *d = h * g + bt;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &FeatureMap<S>) -> FeatureMap<S> {
        let [b, c, t, f] = dy.dims();
        let plane = t * f;
        let count = S::of((b * plane) as f64);
        let mut dx = FeatureMap::zeros(dy.dims());
        for ch in 0..c {
            let mut sum_dy = S::zero();
            let mut sum_dy_xhat = S::zero();
            for n in 0..b {
                let off = (n * c + ch) * plane;
                let d = &dy.item(n)[ch * plane..(ch + 1) * plane];
                let xh = &self.xhat[off..off + plane];
                for (&dv, &xv) in d.iter().zip(xh) {
                    sum_dy += dv;
                    sum_dy_xhat += dv * xv;
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value[ch] * self.inv_std[ch];
            let mean_dy = sum_dy / count;
            let mean_dy_xhat = sum_dy_xhat / count;
            for n in 0..b {
                let off = (n * c + ch) * plane;
                let d = &dy.item(n)[ch * plane..(ch + 1) * plane];
                let xh = &self.xhat[off..off + plane];
                let out = &mut dx.item_mut(n)[ch * plane..(ch + 1) * plane];
                match self.mode {
                    Mode::Train => {
                        for ((o, &dv), &xv) in out.iter_mut().zip(d).zip(xh) {
                            *o = scale * (dv - mean_dy - xv * mean_dy_xhat);
                        }
                    }
                    Mode::Eval => {
                        for (o, &dv) in out.iter_mut().zip(d) {
                            *o = scale * dv;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<S: Scalar> Visit<S> for BatchNorm2d<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
