use alloc::vec;
use alloc::vec::Vec;

use super::{join, Linear, Param, Visit};
use crate::error::shape_err;
use crate::{Result, Scalar};

/// Multi-head scaled dot-product attention from `t_q` query rows onto
/// `t_kv` key/value rows, batched over independent items.
///
/// Per head: `softmax(Q K^T / sqrt(d_head)) V`; heads are concatenated and
/// passed through an output projection. No positional information is added.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<S> {
    pub heads: usize,
    pub model_dim: usize,
    pub query: Linear<S>,
    pub key: Linear<S>,
    pub value: Linear<S>,
    pub out: Linear<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    weights: Vec<S>,
    dims: (usize, usize, usize),
}

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new(query_dim: usize, kv_dim: usize, model_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(shape_err!("{heads} heads do not divide model dim {model_dim}"));
        }
        Ok(Self {
            heads,
            model_dim,
            query: Linear::new(query_dim, model_dim),
            key: Linear::new(kv_dim, model_dim),
            value: Linear::new(kv_dim, model_dim),
            out: Linear::new(model_dim, model_dim),
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
            weights: Vec::new(),
            dims: (0, 0, 0),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Attention weights of the last forward, laid out (batch, head, t_q, t_kv).
    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    /// `queries` is (batch * t_q, query_dim), `kv` is (batch * t_kv, kv_dim).
    pub fn forward(&mut self, queries: &[S], kv: &[S], batch: usize, t_q: usize, t_kv: usize) -> Result<Vec<S>> {
        if queries.len() != batch * t_q * self.query.in_dim || kv.len() != batch * t_kv * self.key.in_dim {
            return Err(shape_err!(
                "attention inputs {} / {} do not match batch {batch}, t_q {t_q}, t_kv {t_kv}",
                queries.len(),
                kv.len()
            ));
        }
        if t_kv == 0 {
            return Err(shape_err!("attention needs at least one key"));
        }
        let (dm, dh, nh) = (self.model_dim, self.head_dim(), self.heads);
        self.q = self.query.forward(queries, batch * t_q);
        self.k = self.key.forward(kv, batch * t_kv);
        self.v = self.value.forward(kv, batch * t_kv);
        self.dims = (batch, t_q, t_kv);
        let scale = S::one() / S::of(dh as f64).sqrt();
        self.weights = vec![S::zero(); batch * nh * t_q * t_kv];
        let mut ctx = vec![S::zero(); batch * t_q * dm];
        for b in 0..batch {
            for hd in 0..nh {
                for i in 0..t_q {
                    let qrow = &self.q[(b * t_q + i) * dm + hd * dh..][..dh];
                    let w = &mut self.weights[((b * nh + hd) * t_q + i) * t_kv..][..t_kv];
                    let mut max = S::neg_infinity();
                    for (j, wj) in w.iter_mut().enumerate() {
                        let krow = &self.k[(b * t_kv + j) * dm + hd * dh..][..dh];
                        let s = qrow.iter().zip(krow).map(|(&a, &c)| a * c).sum::<S>() * scale;
                        *wj = s;
                        if s > max {
                            max = s;
                        }
                    }
                    let mut z = S::zero();
                    for wj in w.iter_mut() {
                        *wj = (*wj - max).exp();
                        z += *wj;
                    }
                    for wj in w.iter_mut() {
                        *wj /= z;
                    }
                    let out = &mut ctx[(b * t_q + i) * dm + hd * dh..][..dh];
                    for (j, &wj) in w.iter().enumerate() {
                        let vrow = &self.v[(b * t_kv + j) * dm + hd * dh..][..dh];
                        for (o, &vv) in out.iter_mut().zip(vrow) {
                            *o += wj * vv;
                        }
                    }
                }
            }
        }
        Ok(self.out.forward(&ctx, batch * t_q))
    }

    /// Returns gradients for (queries, kv).
    pub fn backward(&mut self, dy: &[S]) -> (Vec<S>, Vec<S>) {
        let (batch, t_q, t_kv) = self.dims;
        let (dm, dh, nh) = (self.model_dim, self.head_dim(), self.heads);
        let scale = S::one() / S::of(dh as f64).sqrt();
        let dctx = self.out.backward(dy);
        let mut dq = vec![S::zero(); batch * t_q * dm];
        let mut dk = vec![S::zero(); batch * t_kv * dm];
        let mut dv = vec![S::zero(); batch * t_kv * dm];
        let mut dw = vec![S::zero(); t_kv];
        for b in 0..batch {
            for hd in 0..nh {
                for i in 0..t_q {
                    let w = &self.weights[((b * nh + hd) * t_q + i) * t_kv..][..t_kv];
                    let dc = &dctx[(b * t_q + i) * dm + hd * dh..][..dh];
                    for j in 0..t_kv {
                        let vrow = &self.v[(b * t_kv + j) * dm + hd * dh..][..dh];
                        dw[j] = dc.iter().zip(vrow).map(|(&a, &c)| a * c).sum();
                        let dvrow = &mut dv[(b * t_kv + j) * dm + hd * dh..][..dh];
                        for (d, &g) in dvrow.iter_mut().zip(dc) {
                            *d += w[j] * g;
                        }
                    }
                    let dot: S = dw.iter().zip(w).map(|(&a, &c)| a * c).sum();
                    let qrow: Vec<S> = self.q[(b * t_q + i) * dm + hd * dh..][..dh].to_vec();
                    for j in 0..t_kv {
                        let ds = w[j] * (dw[j] - dot) * scale;
                        if ds == S::zero() {
                            continue;
                        }
                        let krow = &self.k[(b * t_kv + j) * dm + hd * dh..][..dh];
                        let dqrow = &mut dq[(b * t_q + i) * dm + hd * dh..][..dh];
                        for (d, &kv) in dqrow.iter_mut().zip(krow) {
                            *d += ds * kv;
                        }
                        let dkrow = &mut dk[(b * t_kv + j) * dm + hd * dh..][..dh];
                        for (d, &qv) in dkrow.iter_mut().zip(&qrow) {
                            *d += ds * qv;
                        }
                    }
                }
            }
        }
        let dqueries = self.query.backward(&dq);
        let mut dkv = self.key.backward(&dk);
        for (a, b) in dkv.iter_mut().zip(self.value.backward(&dv)) {
            *a += b;
        }
        (dqueries, dkv)
    }
}

impl<S: Scalar> Visit<S> for MultiHeadAttention<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}
