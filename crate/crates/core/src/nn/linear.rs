use alloc::vec::Vec;

use super::{fan_in_bound, join, Init, Param, Visit};
use crate::tensor::gemm;
use crate::Scalar;

/// Affine map applied to each row of an `(n, in_dim)` matrix.
#[derive(Debug, Clone)]
pub struct Linear<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        let b = fan_in_bound(in_dim);
        Self::with_init(in_dim, out_dim, Init::Uniform(b), Init::Uniform(b))
    }

    pub fn with_init(in_dim: usize, out_dim: usize, weight: Init, bias: Init) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::new(&[out_dim, in_dim], weight),
            bias: Param::new(&[out_dim], bias),
            input: Vec::new(),
        }
    }

    /// Stateless evaluation on `rows` rows.
    pub fn apply(&self, x: &[S], rows: usize) -> Vec<S> {
        assert_eq!(x.len(), rows * self.in_dim, "linear: input width");
        let mut y = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(false, true, rows, self.out_dim, self.in_dim, S::one(), x, &self.weight.value, S::one(), &mut y);
        y
    }

    pub fn forward(&mut self, x: &[S], rows: usize) -> Vec<S> {
        let y = self.apply(x, rows);
        self.input.clear();
        self.input.extend_from_slice(x);
        y
    }

    pub fn backward(&mut self, dy: &[S]) -> Vec<S> {
        let rows = self.input.len() / self.in_dim.max(1);
        assert_eq!(dy.len(), rows * self.out_dim, "linear: grad width");
        gemm(true, false, self.out_dim, self.in_dim, rows, S::one(), dy, &self.input, S::one(), &mut self.weight.grad);
        for r in 0..rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(&dy[r * self.out_dim..(r + 1) * self.out_dim]) {
                *g += d;
            }
        }
        let mut dx = alloc::vec![S::zero(); rows * self.in_dim];
        gemm(false, false, rows, self.in_dim, self.out_dim, S::one(), dy, &self.weight.value, S::zero(), &mut dx);
        dx
    }
}

impl<S: Scalar> Visit<S> for Linear<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
