use alloc::vec;
use alloc::vec::Vec;

use super::{fan_in_bound, join, Init, Param, Visit};
use crate::error::shape_err;
use crate::tensor::{conv_out_len, gemm, ConvGeom, FeatureMap};
use crate::{Result, Scalar};

/// 2-D convolution, time stride 1 with causal padding, frequency stride
/// `stride_f` without padding. Time length is preserved.
#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride_f: usize,
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param<S>,
    pub bias: Param<S>,
    cols: Vec<Vec<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: (usize, usize), stride_f: usize, in_f: usize) -> Result<Self> {
        let out_f = conv_out_len(in_f, kernel.1, stride_f)
            .ok_or_else(|| shape_err!("frequency {in_f} smaller than kernel {}", kernel.1))?;
        let b = fan_in_bound(in_ch * kernel.0 * kernel.1);
        Ok(Self {
            in_ch,
            out_ch,
            kernel,
            stride_f,
            in_f,
            out_f,
            weight: Param::new(&[out_ch, in_ch * kernel.0 * kernel.1], Init::Uniform(b)),
            bias: Param::new(&[out_ch], Init::Uniform(b)),
            cols: Vec::new(),
        })
    }

    fn geom(&self, time: usize) -> ConvGeom {
        ConvGeom {
            channels: self.in_ch,
            kt: self.kernel.0,
            kf: self.kernel.1,
            stride_f: self.stride_f,
            pad_t: self.kernel.0 - 1,
            time,
            wide_f: self.in_f,
            narrow_f: self.out_f,
        }
    }

    pub fn forward(&mut self, x: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let [b, c, t, f] = x.dims();
        if c != self.in_ch || f != self.in_f {
            return Err(shape_err!(
                "conv expects ({}, _, {}) channels/freq, got {:?}",
                self.in_ch,
                self.in_f,
                x.dims()
            ));
        }
        let g = self.geom(t);
        let (k, n) = (g.col_rows(), g.col_cols());
        let mut y = FeatureMap::zeros([b, self.out_ch, t, self.out_f]);
        self.cols.resize_with(b, Vec::new);
        for i in 0..b {
            let col = &mut self.cols[i];
            col.resize(k * n, S::zero());
            g.im2col(x.item(i), col);
            let out = y.item_mut(i);
            for (o, &bias) in self.bias.value.iter().enumerate() {
                out[o * n..(o + 1) * n].fill(bias);
            }
            gemm(false, false, self.out_ch, n, k, S::one(), &self.weight.value, col, S::one(), out);
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &FeatureMap<S>) -> FeatureMap<S> {
        let [b, _, t, _] = dy.dims();
        let g = self.geom(t);
        let (k, n) = (g.col_rows(), g.col_cols());
        let mut dx = FeatureMap::zeros([b, self.in_ch, t, self.in_f]);
        let mut dcol = vec![S::zero(); k * n];
        for i in 0..b {
            let d = dy.item(i);
            gemm(false, true, self.out_ch, k, n, S::one(), d, &self.cols[i], S::one(), &mut self.weight.grad);
            for (o, gb) in self.bias.grad.iter_mut().enumerate() {
                *gb += d[o * n..(o + 1) * n].iter().copied().sum::<S>();
            }
            gemm(true, false, k, n, self.out_ch, S::one(), &self.weight.value, d, S::zero(), &mut dcol);
            g.col2im(&dcol, dx.item_mut(i));
        }
        dx
    }
}

impl<S: Scalar> Visit<S> for Conv2d<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed counterpart of [`Conv2d`]: maps `in_f` frequency bins up to
/// `out_f`, which may exceed `(in_f - 1) * stride + kernel` by the output
/// padding so the result lines up with an encoder skip.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<S> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride_f: usize,
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Option<FeatureMap<S>>,
}

impl<S: Scalar> ConvTranspose2d<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride_f: usize,
        in_f: usize,
        out_f: usize,
    ) -> Result<Self> {
        let base = (in_f.max(1) - 1) * stride_f + kernel.1;
        if in_f == 0 || out_f < base || out_f >= base + stride_f {
            return Err(shape_err!(
                "transpose conv cannot map {in_f} bins to {out_f} (base {base}, stride {stride_f})"
            ));
        }
        let b = fan_in_bound(in_ch * kernel.0 * kernel.1 / stride_f);
        Ok(Self {
            in_ch,
            out_ch,
            kernel,
            stride_f,
            in_f,
            out_f,
            weight: Param::new(&[in_ch, out_ch * kernel.0 * kernel.1], Init::Uniform(b)),
            bias: Param::new(&[out_ch], Init::Uniform(b)),
            input: None,
        })
    }

    /// Frequency output padding relative to the plain transpose size.
    pub fn output_padding(&self) -> usize {
        self.out_f - ((self.in_f - 1) * self.stride_f + self.kernel.1)
    }

    fn geom(&self, time: usize) -> ConvGeom {
        ConvGeom {
            channels: self.out_ch,
            kt: self.kernel.0,
            kf: self.kernel.1,
            stride_f: self.stride_f,
            pad_t: self.kernel.0 - 1,
            time,
            wide_f: self.out_f,
            narrow_f: self.in_f,
        }
    }

    pub fn forward(&mut self, x: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let [b, c, t, f] = x.dims();
        if c != self.in_ch || f != self.in_f {
            return Err(shape_err!(
                "transpose conv expects ({}, _, {}) channels/freq, got {:?}",
                self.in_ch,
                self.in_f,
                x.dims()
            ));
        }
        let g = self.geom(t);
        let (k, n) = (g.col_rows(), g.col_cols());
        let plane = t * self.out_f;
        let mut y = FeatureMap::zeros([b, self.out_ch, t, self.out_f]);
        let mut cols = vec![S::zero(); k * n];
        for i in 0..b {
            gemm(true, false, k, n, self.in_ch, S::one(), &self.weight.value, x.item(i), S::zero(), &mut cols);
            let out = y.item_mut(i);
            for (o, &bias) in self.bias.value.iter().enumerate() {
                out[o * plane..(o + 1) * plane].fill(bias);
            }
            g.col2im(&cols, out);
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &FeatureMap<S>) -> FeatureMap<S> {
        let x = self.input.as_ref().expect("transpose conv backward before forward");
        let [b, _, t, _] = dy.dims();
        let g = self.geom(t);
        let (k, n) = (g.col_rows(), g.col_cols());
        let plane = t * self.out_f;
        let mut dx = FeatureMap::zeros(x.dims());
        let mut dcols = vec![S::zero(); k * n];
        for i in 0..b {
            let d = dy.item(i);
            for (o, gb) in self.bias.grad.iter_mut().enumerate() {
                *gb += d[o * plane..(o + 1) * plane].iter().copied().sum::<S>();
            }
            g.im2col(d, &mut dcols);
            gemm(false, true, self.in_ch, k, n, S::one(), x.item(i), &dcols, S::one(), &mut self.weight.grad);
            gemm(false, false, self.in_ch, n, k, S::one(), &self.weight.value, &dcols, S::zero(), dx.item_mut(i));
        }
        dx
    }
}

impl<S: Scalar> Visit<S> for ConvTranspose2d<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
