//! Dense row-major tensors and the handful of kernels the layers share.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::{Result, Scalar};

/// `c = alpha * op(a) * op(b) + beta * c` for row-major contiguous matrices.
///
/// `op(a)` is `m x k`; `a` is stored `m x k`, or `k x m` when `ta` is set.
/// Likewise `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: S,
    a: &[S],
    b: &[S],
    beta: S,
    c: &mut [S],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above and strides describe the stated layouts.
    unsafe {
        S::raw_gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// 4-D activation tensor laid out as (batch, channels, time, frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    dims: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![S::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<S>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(shape_err!("feature map dims must be >= 1, got {:?}", dims));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(shape_err!("{} values for dims {:?}", data.len(), dims));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    pub fn batch(&self) -> usize {
        self.dims[0]
    }
    pub fn channels(&self) -> usize {
        self.dims[1]
    }
    pub fn time(&self) -> usize {
        self.dims[2]
    }
    pub fn freq(&self) -> usize {
        self.dims[3]
    }
    pub fn data(&self) -> &[S] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Number of values in one batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn item(&self, b: usize) -> &[S] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [S] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, t: usize, f: usize) -> S {
        let [_, cc, tt, ff] = self.dims;
        self.data[((b * cc + c) * tt + t) * ff + f]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> FeatureMap<T> {
        FeatureMap { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stack `self` and `other` along the channel axis.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let [b, c1, t, f] = self.dims;
        let [b2, c2, t2, f2] = other.dims;
        if b != b2 || t != t2 || f != f2 {
            return Err(shape_err!("cannot concat {:?} with {:?}", self.dims, other.dims));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..b {
            data.extend_from_slice(self.item(i));
            data.extend_from_slice(other.item(i));
        }
        Ok(Self { dims: [b, c1 + c2, t, f], data })
    }

    /// Split off the first `c1` channels; inverse of [`concat_channels`](Self::concat_channels).
    pub fn split_channels(&self, c1: usize) -> (Self, Self) {
        let [b, c, t, f] = self.dims;
        assert!(c1 <= c);
        let plane = t * f;
        let mut lo = Vec::with_capacity(b * c1 * plane);
        let mut hi = Vec::with_capacity(b * (c - c1) * plane);
        for i in 0..b {
            let item = self.item(i);
            lo.extend_from_slice(&item[..c1 * plane]);
            hi.extend_from_slice(&item[c1 * plane..]);
        }
        (Self { dims: [b, c1, t, f], data: lo }, Self { dims: [b, c - c1, t, f], data: hi })
    }
}

/// Geometry of a 2-D convolution with kernel `(kt, kf)`, time stride 1,
/// frequency stride `stride_f`, `pad_t` leading (causal) zero frames and no
/// frequency padding. The "wide" side is the convolution input, the
/// "narrow" side its output; the time length is the same on both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub kt: usize,
    pub kf: usize,
    pub stride_f: usize,
    pub pad_t: usize,
    pub time: usize,
    pub wide_f: usize,
    pub narrow_f: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kt * self.kf
    }
    pub fn col_cols(&self) -> usize {
        self.time * self.narrow_f
    }

    /// Unfold one (channels, time, wide_f) item into `col_rows x col_cols`.
    pub fn im2col<S: Scalar>(&self, wide: &[S], col: &mut [S]) {
        let ncol = self.col_cols();
        debug_assert_eq!(wide.len(), self.channels * self.time * self.wide_f);
        debug_assert_eq!(col.len(), self.col_rows() * ncol);
        for c in 0..self.channels {
            let plane = &wide[c * self.time * self.wide_f..(c + 1) * self.time * self.wide_f];
            for i in 0..self.kt {
                for j in 0..self.kf {
                    let row = (c * self.kt + i) * self.kf + j;
                    let dst = &mut col[row * ncol..(row + 1) * ncol];
                    for t in 0..self.time {
                        let out = &mut dst[t * self.narrow_f..(t + 1) * self.narrow_f];
                        let src_t = t + i;
                        if src_t < self.pad_t || src_t - self.pad_t >= self.time {
                            out.fill(S::zero());
                            continue;
                        }
                        let src = &plane[(src_t - self.pad_t) * self.wide_f..];
                        for (f, o) in out.iter_mut().enumerate() {
                            *o = src[f * self.stride_f + j];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add `col` into `wide`.
    pub fn col2im<S: Scalar>(&self, col: &[S], wide: &mut [S]) {
        let ncol = self.col_cols();
        for c in 0..self.channels {
            let plane = &mut wide[c * self.time * self.wide_f..(c + 1) * self.time * self.wide_f];
            for i in 0..self.kt {
                for j in 0..self.kf {
                    let row = (c * self.kt + i) * self.kf + j;
                    let src = &col[row * ncol..(row + 1) * ncol];
                    for t in 0..self.time {
                        let src_t = t + i;
                        if src_t < self.pad_t || src_t - self.pad_t >= self.time {
                            continue;
                        }
                        let inp = &src[t * self.narrow_f..(t + 1) * self.narrow_f];
                        let dst = &mut plane[(src_t - self.pad_t) * self.wide_f..];
                        for (f, &v) in inp.iter().enumerate() {
                            dst[f * self.stride_f + j] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Output length of a strided valid convolution.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}
