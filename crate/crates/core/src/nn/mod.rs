//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`; a
//! backward call consumes the cache of the most recent forward and
//! accumulates parameter gradients into [`Param::grad`].

mod attention;
mod conv;
mod linear;
mod lstm;
mod norm;

pub use attention::MultiHeadAttention;
pub use conv::{Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use lstm::{BiLstm, LstmStack};
pub use norm::BatchNorm2d;


use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::Scalar;

/// Whether batch norm uses batch statistics (and updates running stats).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How a parameter is filled by [`crate::model::ModelParams::initialize`].
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    /// Explicit values, e.g. an identity selection.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Saved with the model but never touched by the optimizer.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
    pub kind: ParamKind,
    pub init: Init,
}

impl<S: Scalar> Param<S> {
    pub fn new(shape: &[usize], init: Init) -> Self {
        let n = shape.iter().product();
        let mut p = Self {
            shape: shape.to_vec(),
            value: vec![S::zero(); n],
            grad: vec![S::zero(); n],
            kind: ParamKind::Trainable,
            init,
        };
        p.reset_fixed();
        p
    }

    pub fn buffer(shape: &[usize], init: Init) -> Self {
        Self { kind: ParamKind::Buffer, ..Self::new(shape, init) }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    /// Apply the non-random part of the init scheme.
    pub(crate) fn reset_fixed(&mut self) {
        match &self.init {
            Init::Zeros | Init::Uniform(_) => self.value.fill(S::zero()),
            Init::Ones => self.value.fill(S::one()),
            Init::Values(v) => {
                assert_eq!(v.len(), self.value.len());
                for (d, &s) in self.value.iter_mut().zip(v) {
                    *d = S::of(s);
                }
            }
        }
    }
}

/// Anything owning named parameters.
pub trait Visit<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>));
}

pub fn join(prefix: &str, name: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + name.len() + 1);
    s.push_str(prefix);
    if !prefix.is_empty() {
        s.push('.');
    }
    s.push_str(name);
    s
}

/// Kaiming-style uniform bound for a layer with the given fan-in.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / libm::sqrt(fan_in.max(1) as f64)
}
