use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{fan_in_bound, join, Init, Param, Visit};
use crate::tensor::{gemm, sigmoid};
use crate::Scalar;

/// One direction of an LSTM over `(batch, time, input)` sequences.
/// Gate order in the stacked matrices is input, forget, cell, output.
#[derive(Debug, Clone)]
struct LstmDir<S> {
    input_dim: usize,
    hidden: usize,
    reverse: bool,
    w_ih: Param<S>,
    w_hh: Param<S>,
    bias: Param<S>,
    // caches, all indexed by row b * time + t
    x: Vec<S>,
    acts: Vec<S>,
    cell: Vec<S>,
    tanh_cell: Vec<S>,
    out: Vec<S>,
    batch: usize,
    time: usize,
}

impl<S: Scalar> LstmDir<S> {
    fn new(input_dim: usize, hidden: usize, reverse: bool) -> Self {
        let b = fan_in_bound(hidden);
        Self {
            input_dim,
            hidden,
            reverse,
            w_ih: Param::new(&[4 * hidden, input_dim], Init::Uniform(b)),
            w_hh: Param::new(&[4 * hidden, hidden], Init::Uniform(b)),
            bias: Param::new(&[4 * hidden], Init::Uniform(b)),
            x: Vec::new(),
            acts: Vec::new(),
            cell: Vec::new(),
            tanh_cell: Vec::new(),
            out: Vec::new(),
            batch: 0,
            time: 0,
        }
    }

    fn order(&self, s: usize) -> usize {
        if self.reverse {
            self.time - 1 - s
        } else {
            s
        }
    }

    fn forward(&mut self, x: &[S], batch: usize, time: usize) -> &[S] {
        let (h, g4) = (self.hidden, 4 * self.hidden);
        let rows = batch * time;
        assert_eq!(x.len(), rows * self.input_dim, "lstm: input width");
        self.batch = batch;
        self.time = time;
        self.x.clear();
        self.x.extend_from_slice(x);

        let mut xw = Vec::with_capacity(rows * g4);
        for _ in 0..rows {
            xw.extend_from_slice(&self.bias.value);
        }
        gemm(false, true, rows, g4, self.input_dim, S::one(), x, &self.w_ih.value, S::one(), &mut xw);

        self.acts.clear();
        self.acts.resize(rows * g4, S::zero());
        self.cell.clear();
        self.cell.resize(rows * h, S::zero());
        self.tanh_cell.clear();
        self.tanh_cell.resize(rows * h, S::zero());
        self.out.clear();
        self.out.resize(rows * h, S::zero());

        let mut h_prev = vec![S::zero(); batch * h];
        let mut c_prev = vec![S::zero(); batch * h];
        let mut gates = vec![S::zero(); batch * g4];
        for s in 0..time {
            let t = self.order(s);
            for b in 0..batch {
                let row = b * time + t;
                gates[b * g4..(b + 1) * g4].copy_from_slice(&xw[row * g4..(row + 1) * g4]);
            }
            if s > 0 {
                gemm(false, true, batch, g4, h, S::one(), &h_prev, &self.w_hh.value, S::one(), &mut gates);
            }
            for b in 0..batch {
                let row = b * time + t;
                let gr = &gates[b * g4..(b + 1) * g4];
                let act = &mut self.acts[row * g4..(row + 1) * g4];
                for j in 0..h {
                    let i = sigmoid(gr[j]);
                    let f = sigmoid(gr[h + j]);
                    let g = gr[2 * h + j].tanh();
                    let o = sigmoid(gr[3 * h + j]);
                    act[j] = i;
                    act[h + j] = f;
                    act[2 * h + j] = g;
                    act[3 * h + j] = o;
                    let c = f * c_prev[b * h + j] + i * g;
                    let tc = c.tanh();
                    self.cell[row * h + j] = c;
                    self.tanh_cell[row * h + j] = tc;
                    let hv = o * tc;
                    self.out[row * h + j] = hv;
                    c_prev[b * h + j] = c;
                    h_prev[b * h + j] = hv;
                }
            }
        }
        &self.out
    }

    fn backward(&mut self, dout: &[S]) -> Vec<S> {
        let (h, g4) = (self.hidden, 4 * self.hidden);
        let (batch, time) = (self.batch, self.time);
        let rows = batch * time;
        assert_eq!(dout.len(), rows * h, "lstm: grad width");
        let mut dgates = vec![S::zero(); rows * g4];
        let mut dh_next = vec![S::zero(); batch * h];
        let mut dc_next = vec![S::zero(); batch * h];
        let mut dg_step = vec![S::zero(); batch * g4];
        let one = S::one();
        for s in (0..time).rev() {
            let t = self.order(s);
            let prev_t = if s > 0 { Some(self.order(s - 1)) } else { None };
            for b in 0..batch {
                let row = b * time + t;
                let act = &self.acts[row * g4..(row + 1) * g4];
                let dg = &mut dgates[row * g4..(row + 1) * g4];
                for j in 0..h {
                    let (i, f, g, o) = (act[j], act[h + j], act[2 * h + j], act[3 * h + j]);
                    let tc = self.tanh_cell[row * h + j];
                    let c_prev = prev_t.map_or(S::zero(), |pt| self.cell[(b * time + pt) * h + j]);
                    let dh = dout[row * h + j] + dh_next[b * h + j];
                    let d_o = dh * tc;
                    let dc = dh * o * (one - tc * tc) + dc_next[b * h + j];
                    dg[j] = dc * g * i * (one - i);
                    dg[h + j] = dc * c_prev * f * (one - f);
                    dg[2 * h + j] = dc * i * (one - g * g);
                    dg[3 * h + j] = d_o * o * (one - o);
                    dc_next[b * h + j] = dc * f;
                }
                dg_step[b * g4..(b + 1) * g4].copy_from_slice(dg);
            }
            gemm(false, false, batch, h, g4, S::one(), &dg_step, &self.w_hh.value, S::zero(), &mut dh_next);
        }

        // h_prev for every row, zero on each sequence's first step
        let mut h_prev = vec![S::zero(); rows * h];
        for s in 1..time {
            let (t, pt) = (self.order(s), self.order(s - 1));
            for b in 0..batch {
                let (row, prow) = (b * time + t, b * time + pt);
                h_prev[row * h..(row + 1) * h].copy_from_slice(&self.out[prow * h..(prow + 1) * h]);
            }
        }
        gemm(true, false, g4, h, rows, S::one(), &dgates, &h_prev, S::one(), &mut self.w_hh.grad);
        gemm(true, false, g4, self.input_dim, rows, S::one(), &dgates, &self.x, S::one(), &mut self.w_ih.grad);
        for r in 0..rows {
            for (gb, &d) in self.bias.grad.iter_mut().zip(&dgates[r * g4..(r + 1) * g4]) {
                *gb += d;
            }
        }
        let mut dx = vec![S::zero(); rows * self.input_dim];
        gemm(false, false, rows, self.input_dim, g4, S::one(), &dgates, &self.w_ih.value, S::zero(), &mut dx);
        dx
    }
}

impl<S: Scalar> Visit<S> for LstmDir<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Bidirectional LSTM layer; output rows are `[forward | backward]`, width `2 * hidden`.
#[derive(Debug, Clone)]
pub struct BiLstm<S> {
    fwd: LstmDir<S>,
    bwd: LstmDir<S>,
}

impl<S: Scalar> BiLstm<S> {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self { fwd: LstmDir::new(input_dim, hidden, false), bwd: LstmDir::new(input_dim, hidden, true) }
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn forward(&mut self, x: &[S], batch: usize, time: usize) -> Vec<S> {
        let h = self.fwd.hidden;
        let rows = batch * time;
        let mut y = vec![S::zero(); rows * 2 * h];
        let f = self.fwd.forward(x, batch, time);
        for r in 0..rows {
            y[r * 2 * h..r * 2 * h + h].copy_from_slice(&f[r * h..(r + 1) * h]);
        }
        let bk = self.bwd.forward(x, batch, time);
        for r in 0..rows {
            y[r * 2 * h + h..(r + 1) * 2 * h].copy_from_slice(&bk[r * h..(r + 1) * h]);
        }
        y
    }

    pub fn backward(&mut self, dy: &[S]) -> Vec<S> {
        let h = self.fwd.hidden;
        let rows = dy.len() / (2 * h);
        let mut df = Vec::with_capacity(rows * h);
        let mut db = Vec::with_capacity(rows * h);
        for r in 0..rows {
            df.extend_from_slice(&dy[r * 2 * h..r * 2 * h + h]);
            db.extend_from_slice(&dy[r * 2 * h + h..(r + 1) * 2 * h]);
        }
        let mut dx = self.fwd.backward(&df);
        for (a, b) in dx.iter_mut().zip(self.bwd.backward(&db)) {
            *a += b;
        }
        dx
    }
}

impl<S: Scalar> Visit<S> for BiLstm<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }
}

/// Stacked bidirectional LSTM; layers after the first take `2 * hidden` inputs.
#[derive(Debug, Clone)]
pub struct LstmStack<S> {
    pub layers: Vec<BiLstm<S>>,
}

impl<S: Scalar> LstmStack<S> {
    pub fn new(input_dim: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| BiLstm::new(if l == 0 { input_dim } else { 2 * hidden }, hidden))
            .collect();
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| 2 * l.hidden())
    }

    pub fn forward(&mut self, x: &[S], batch: usize, time: usize) -> Vec<S> {
        let mut cur = x.to_vec();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, batch, time);
        }
        cur
    }

    pub fn backward(&mut self, dy: &[S]) -> Vec<S> {
        let mut cur = dy.to_vec();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }
}

impl<S: Scalar> Visit<S> for LstmStack<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit(&join(prefix, &format!("{i}")), f);
        }
    }
}
