//! U-Net style convolutional recurrent network producing a bounded
//! two-channel spectrogram mask.
//!
//! Encoder blocks are conv -> batch norm -> GLU; the recurrent core is a
//! stack of bidirectional LSTMs followed by a linear projection back to
//! the encoder width; decoder blocks concatenate the mirrored encoder
//! output, batch-normalize, and apply a gated transpose convolution.
//!
//! Four taps expose activations for audio-visual fusion:
//! `A` the network input, `B` an intermediate encoder output, `C` the
//! recurrent output and `D` the pre-sigmoid mask logits.

use alloc::format;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::nn::{BatchNorm2d, Conv2d, ConvTranspose2d, Linear, LstmStack, Mode, Param, Visit};
use crate::tensor::{conv_out_len, sigmoid, FeatureMap};
use crate::{Result, Scalar};

/// Encoder frequency trace of the default configuration.
pub const DEFAULT_FREQ_TRACE: [usize; 6] = [161, 79, 38, 18, 8, 3];

/// Mask logits are clamped to this magnitude so the sigmoid stays strictly
/// inside (0, 1) in both f32 and f64.
pub const LOGIT_CLAMP: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrnConfig {
    pub in_channels: usize,
    pub freq_bins: usize,
    pub enc_channels: Vec<usize>,
    pub dec_channels: Vec<usize>,
    /// (time, frequency)
    pub kernel: (usize, usize),
    pub stride_f: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Must equal last encoder channels x last encoder frequency.
    pub lstm_input: usize,
    /// Encoder block (0-based) whose output is tap B.
    pub intermediate_block: usize,
}

impl Default for CrnConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            freq_bins: 161,
            enc_channels: alloc::vec![16, 32, 64, 76, 98],
            dec_channels: alloc::vec![76, 64, 32, 16, 2],
            kernel: (2, 4),
            stride_f: 2,
            lstm_layers: 4,
            lstm_hidden: 294,
            lstm_input: 294,
            intermediate_block: 2,
        }
    }
}

impl CrnConfig {
    /// A config with the given encoder ladder; the decoder ladder mirrors it.
    pub fn with_ladder(freq_bins: usize, enc_channels: &[usize], lstm_layers: usize, lstm_hidden: usize) -> Self {
        let mut dec: Vec<usize> = enc_channels.iter().rev().skip(1).copied().collect();
        dec.push(2);
        let mut cfg = Self {
            freq_bins,
            enc_channels: enc_channels.to_vec(),
            dec_channels: dec,
            lstm_layers,
            lstm_hidden,
            intermediate_block: enc_channels.len().saturating_sub(1) / 2,
            ..Self::default()
        };
        if let Ok(trace) = cfg.freq_trace() {
            cfg.lstm_input = enc_channels.last().copied().unwrap_or(0) * trace.last().copied().unwrap_or(0);
        }
        cfg
    }

    /// Frequency size at the input and after every encoder block.
    pub fn freq_trace(&self) -> Result<Vec<usize>> {
        let mut trace = alloc::vec![self.freq_bins];
        for i in 0..self.enc_channels.len() {
            let f = conv_out_len(trace[i], self.kernel.1, self.stride_f)
                .ok_or_else(|| shape_err!("encoder block {i}: {} bins below kernel width", trace[i]))?;
            trace.push(f);
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<Vec<usize>> {
        let n = self.enc_channels.len();
        if n == 0 || self.dec_channels.len() != n {
            return Err(shape_err!("encoder/decoder ladders must be non-empty and equally long"));
        }
        for l in 0..n - 1 {
            if self.dec_channels[l] != self.enc_channels[n - 2 - l] {
                return Err(shape_err!(
                    "decoder block {l} outputs {} channels but mirrored encoder block has {}",
                    self.dec_channels[l],
                    self.enc_channels[n - 2 - l]
                ));
            }
        }
        if self.dec_channels[n - 1] != self.in_channels {
            return Err(shape_err!("last decoder block must output {} channels", self.in_channels));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride_f == 0 {
            return Err(shape_err!("kernel and stride must be positive"));
        }
        let trace = self.freq_trace()?;
        let flat = self.enc_channels[n - 1] * trace[n];
        if flat != self.lstm_input {
            return Err(shape_err!(
                "recurrent input {} != last encoder channels {} x frequency {}",
                self.lstm_input,
                self.enc_channels[n - 1],
                trace[n]
            ));
        }
        if self.intermediate_block >= n {
            return Err(shape_err!("intermediate tap block {} out of range", self.intermediate_block));
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return Err(shape_err!("recurrent core needs at least one layer and hidden unit"));
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tap {
    /// Network input (input fusion).
    A,
    /// Intermediate encoder output (intermediate fusion).
    B,
    /// Recurrent core output (late fusion).
    C,
    /// Mask logits before the sigmoid (mask fusion).
    D,
}

impl Tap {
    pub const ALL: [Tap; 4] = [Tap::A, Tap::B, Tap::C, Tap::D];
}

/// Transformation applied to exactly one tap before downstream layers
/// consume it.
pub trait TapHook<S> {
    fn tap(&self) -> Tap;
    fn forward(&mut self, x: FeatureMap<S>, mode: Mode) -> Result<FeatureMap<S>>;
    fn backward(&mut self, dy: FeatureMap<S>) -> FeatureMap<S>;
}

/// Activations recorded at the four taps (before any hook is applied).
#[derive(Debug, Clone, PartialEq)]
pub struct TapSet<S> {
    pub a: FeatureMap<S>,
    pub b: FeatureMap<S>,
    pub c: FeatureMap<S>,
    pub d: FeatureMap<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrnOutput<S> {
    pub mask: FeatureMap<S>,
    pub taps: TapSet<S>,
}

fn glu<S: Scalar>(x: &FeatureMap<S>) -> FeatureMap<S> {
    let [b, c2, t, f] = x.dims();
    let c = c2 / 2;
    let plane = c * t * f;
    let mut y = FeatureMap::zeros([b, c, t, f]);
    for n in 0..b {
        let (val, gate) = x.item(n).split_at(plane);
        for ((o, &a), &g) in y.item_mut(n).iter_mut().zip(val).zip(gate) {
            *o = a * sigmoid(g);
        }
    }
    y
}

fn glu_backward<S: Scalar>(x: &FeatureMap<S>, dy: &FeatureMap<S>) -> FeatureMap<S> {
    let [b, c2, t, f] = x.dims();
    let plane = c2 / 2 * t * f;
    let mut dx = FeatureMap::zeros(x.dims());
    for n in 0..b {
        let (val, gate) = x.item(n).split_at(plane);
        let d = dy.item(n);
        let (dval, dgate) = dx.item_mut(n).split_at_mut(plane);
        for i in 0..plane {
            let s = sigmoid(gate[i]);
            dval[i] = d[i] * s;
            dgate[i] = d[i] * val[i] * s * (S::one() - s);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct EncoderBlock<S> {
    conv: Conv2d<S>,
    norm: BatchNorm2d<S>,
    gate_in: Option<FeatureMap<S>>,
}

#[derive(Debug, Clone)]
struct DecoderBlock<S> {
    norm: BatchNorm2d<S>,
    conv: ConvTranspose2d<S>,
    x_channels: usize,
    gate_in: Option<FeatureMap<S>>,
}

#[derive(Debug, Clone)]
pub struct Crn<S> {
    cfg: CrnConfig,
    trace: Vec<usize>,
    enc: Vec<EncoderBlock<S>>,
    rnn: LstmStack<S>,
    proj: Linear<S>,
    dec: Vec<DecoderBlock<S>>,
    rnn_shape: [usize; 4],
    logits: Option<FeatureMap<S>>,
    mask: Option<FeatureMap<S>>,
}

impl<S: Scalar> Crn<S> {
    /// Builds the network, checking the frequency trace through encoder and
    /// decoder and the recurrent width.
    pub fn new(cfg: CrnConfig) -> Result<Self> {
        let trace = cfg.validate()?;
        let n = cfg.enc_channels.len();
        let mut enc = Vec::with_capacity(n);
        let mut in_ch = cfg.in_channels;
        for i in 0..n {
            let out = cfg.enc_channels[i];
            enc.push(EncoderBlock {
                conv: Conv2d::new(in_ch, 2 * out, cfg.kernel, cfg.stride_f, trace[i])?,
                norm: BatchNorm2d::new(2 * out),
                gate_in: None,
            });
            in_ch = out;
        }
        let mut dec = Vec::with_capacity(n);
        let mut x_ch = cfg.enc_channels[n - 1];
        for l in 0..n {
            let skip_ch = cfg.enc_channels[n - 1 - l];
            let out = cfg.dec_channels[l];
            let conv = ConvTranspose2d::new(x_ch + skip_ch, 2 * out, cfg.kernel, cfg.stride_f, trace[n - l], trace[n - 1 - l])
                .map_err(|e| shape_err!("decoder block {l}: {e}"))?;
            dec.push(DecoderBlock { norm: BatchNorm2d::new(x_ch + skip_ch), conv, x_channels: x_ch, gate_in: None });
            x_ch = out;
        }
        let rnn = LstmStack::new(cfg.lstm_input, cfg.lstm_hidden, cfg.lstm_layers);
        let proj = Linear::new(rnn.output_dim(), cfg.lstm_input);
        Ok(Self { cfg, trace, enc, rnn, proj, dec, rnn_shape: [0; 4], logits: None, mask: None })
    }

    pub fn config(&self) -> &CrnConfig {
        &self.cfg
    }

    /// Frequency sizes at the input and after each encoder block.
    pub fn freq_trace(&self) -> &[usize] {
        &self.trace
    }

    /// Frequency sizes after each decoder block.
    pub fn decoder_trace(&self) -> Vec<usize> {
        self.dec.iter().map(|d| d.conv.out_f).collect()
    }

    pub fn decoder_output_padding(&self) -> Vec<usize> {
        self.dec.iter().map(|d| d.conv.output_padding()).collect()
    }

    /// (channels, frequency) of the activation at `tap`.
    pub fn tap_shape(&self, tap: Tap) -> (usize, usize) {
        let n = self.enc.len();
        match tap {
            Tap::A | Tap::D => (self.cfg.in_channels, self.cfg.freq_bins),
            Tap::B => (self.cfg.enc_channels[self.cfg.intermediate_block], self.trace[self.cfg.intermediate_block + 1]),
            Tap::C => (self.cfg.enc_channels[n - 1], self.trace[n]),
        }
    }

    pub fn encoder_block(&mut self, index: usize, x: &FeatureMap<S>, mode: Mode) -> Result<FeatureMap<S>> {
        let blk = self.enc.get_mut(index).ok_or_else(|| shape_err!("no encoder block {index}"))?;
        let z = blk.conv.forward(x)?;
        let z = blk.norm.forward(&z, mode)?;
        let y = glu(&z);
        blk.gate_in = Some(z);
        Ok(y)
    }

    fn encoder_block_backward(&mut self, index: usize, dy: &FeatureMap<S>) -> FeatureMap<S> {
        let blk = &mut self.enc[index];
        let z = blk.gate_in.as_ref().expect("encoder backward before forward");
        let dz = glu_backward(z, dy);
        let dz = blk.norm.backward(&dz);
        blk.conv.backward(&dz)
    }

    /// (B, C, T, F) -> bLSTM stack over time on C*F features -> projection
    /// back to C*F -> (B, C, T, F).
    pub fn recurrent_core(&mut self, x: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let [b, c, t, f] = x.dims();
        if c * f != self.cfg.lstm_input {
            return Err(shape_err!("recurrent core expects {} features per frame, got {:?}", self.cfg.lstm_input, x.dims()));
        }
        let width = c * f;
        let mut seq = alloc::vec![S::zero(); b * t * width];
        for n in 0..b {
            for ch in 0..c {
                for tt in 0..t {
                    for ff in 0..f {
                        seq[(n * t + tt) * width + ch * f + ff] = x.at(n, ch, tt, ff);
                    }
                }
            }
        }
        let h = self.rnn.forward(&seq, b, t);
        let y = self.proj.forward(&h, b * t);
        self.rnn_shape = x.dims();
        let mut out = FeatureMap::zeros(x.dims());
        for n in 0..b {
            let item = out.item_mut(n);
            for ch in 0..c {
                for tt in 0..t {
                    for ff in 0..f {
                        item[(ch * t + tt) * f + ff] = y[(n * t + tt) * width + ch * f + ff];
                    }
                }
            }
        }
        Ok(out)
    }

    fn recurrent_backward(&mut self, dy: &FeatureMap<S>) -> FeatureMap<S> {
        let [b, c, t, f] = self.rnn_shape;
        let width = c * f;
        let mut dseq = alloc::vec![S::zero(); b * t * width];
        for n in 0..b {
            for ch in 0..c {
                for tt in 0..t {
                    for ff in 0..f {
                        dseq[(n * t + tt) * width + ch * f + ff] = dy.at(n, ch, tt, ff);
                    }
                }
            }
        }
        let dh = self.proj.backward(&dseq);
        let dx = self.rnn.backward(&dh);
        let mut out = FeatureMap::zeros(self.rnn_shape);
        for n in 0..b {
            let item = out.item_mut(n);
            for ch in 0..c {
                for tt in 0..t {
                    for ff in 0..f {
                        item[(ch * t + tt) * f + ff] = dx[(n * t + tt) * width + ch * f + ff];
                    }
                }
            }
        }
        out
    }

    /// Decoder block `index`; `skip` is the output of the mirrored encoder block.
    pub fn decoder_block(
        &mut self,
        index: usize,
        x: &FeatureMap<S>,
        skip: &FeatureMap<S>,
        mode: Mode,
    ) -> Result<FeatureMap<S>> {
        let blk = self.dec.get_mut(index).ok_or_else(|| shape_err!("no decoder block {index}"))?;
        if x.time() != skip.time() || x.freq() != skip.freq() || x.batch() != skip.batch() {
            return Err(shape_err!("decoder block {index}: input {:?} vs skip {:?}", x.dims(), skip.dims()));
        }
        let z = x.concat_channels(skip)?;
        let z = blk.norm.forward(&z, mode)?;
        let z = blk.conv.forward(&z)?;
        let y = glu(&z);
        blk.gate_in = Some(z);
        Ok(y)
    }

    /// Returns gradients for (x, skip).
    fn decoder_block_backward(&mut self, index: usize, dy: &FeatureMap<S>) -> (FeatureMap<S>, FeatureMap<S>) {
        let blk = &mut self.dec[index];
        let z = blk.gate_in.as_ref().expect("decoder backward before forward");
        let dz = glu_backward(z, dy);
        let dz = blk.conv.backward(&dz);
        let dz = blk.norm.backward(&dz);
        dz.split_channels(blk.x_channels)
    }

    /// Full forward pass from a (B, 2, T, F) spectrogram batch to the mask.
    pub fn forward(
        &mut self,
        x: &FeatureMap<S>,
        mode: Mode,
        mut hook: Option<&mut dyn TapHook<S>>,
    ) -> Result<CrnOutput<S>> {
        let [_, c, _, f] = x.dims();
        if c != self.cfg.in_channels || f != self.cfg.freq_bins {
            return Err(shape_err!(
                "CRN input must be (B, {}, T, {}), got {:?}",
                self.cfg.in_channels,
                self.cfg.freq_bins,
                x.dims()
            ));
        }
        let apply = |tap: Tap, v: FeatureMap<S>, hook: &mut Option<&mut dyn TapHook<S>>| -> Result<FeatureMap<S>> {
            match hook {
                Some(h) if h.tap() == tap => {
                    let dims = v.dims();
                    let out = h.forward(v, mode)?;
                    if out.dims() != dims {
                        return Err(shape_err!("hook at {tap:?} changed shape {dims:?} -> {:?}", out.dims()));
                    }
                    Ok(out)
                }
                _ => Ok(v),
            }
        };
        let n = self.enc.len();
        let tap_a = x.clone();
        let mut h = apply(Tap::A, x.clone(), &mut hook)?;
        let mut skips = Vec::with_capacity(n);
        let mut tap_b = None;
        for i in 0..n {
            h = self.encoder_block(i, &h, mode)?;
            if i == self.cfg.intermediate_block {
                tap_b = Some(h.clone());
                h = apply(Tap::B, h, &mut hook)?;
            }
            skips.push(h.clone());
        }
        let r = self.recurrent_core(&h)?;
        let tap_c = r.clone();
        let mut d = apply(Tap::C, r, &mut hook)?;
        for l in 0..n {
            d = self.decoder_block(l, &d, &skips[n - 1 - l], mode)?;
        }
        let tap_d = d.clone();
        let logits = apply(Tap::D, d, &mut hook)?;
        let clamp = S::of(LOGIT_CLAMP);
        let mask = logits.map(|v| sigmoid(v.max(-clamp).min(clamp)));
        self.logits = Some(logits);
        self.mask = Some(mask.clone());
        Ok(CrnOutput { mask, taps: TapSet { a: tap_a, b: tap_b.expect("tap B recorded"), c: tap_c, d: tap_d } })
    }

    /// Back-propagates a mask gradient; returns the input gradient.
    pub fn backward(&mut self, dmask: &FeatureMap<S>, mut hook: Option<&mut dyn TapHook<S>>) -> FeatureMap<S> {
        let through = |tap: Tap, g: FeatureMap<S>, hook: &mut Option<&mut dyn TapHook<S>>| match hook {
            Some(h) if h.tap() == tap => h.backward(g),
            _ => g,
        };
        let logits = self.logits.as_ref().expect("CRN backward before forward");
        let mask = self.mask.as_ref().expect("CRN backward before forward");
        let clamp = S::of(LOGIT_CLAMP);
        let mut dlogits = FeatureMap::zeros(dmask.dims());
        for ((o, (&dm, &m)), &z) in dlogits.data_mut().iter_mut().zip(dmask.data().iter().zip(mask.data())).zip(logits.data()) {
            *o = if z.abs() < clamp { dm * m * (S::one() - m) } else { S::zero() };
        }
        let n = self.enc.len();
        let mut dd = through(Tap::D, dlogits, &mut hook);
        let mut dskips: Vec<Option<FeatureMap<S>>> = (0..n).map(|_| None).collect();
        for l in (0..n).rev() {
            let (dx, dskip) = self.decoder_block_backward(l, &dd);
            dskips[n - 1 - l] = Some(dskip);
            dd = dx;
        }
        let dd = through(Tap::C, dd, &mut hook);
        let mut dh = self.recurrent_backward(&dd);
        for i in (0..n).rev() {
            dh.add_assign(dskips[i].as_ref().expect("skip gradient"));
            if i == self.cfg.intermediate_block {
                dh = through(Tap::B, dh, &mut hook);
            }
            dh = self.encoder_block_backward(i, &dh);
        }
        through(Tap::A, dh, &mut hook)
    }
}

impl<S: Scalar> Visit<S> for Crn<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.conv.visit(&format!("{prefix}.enc.{i}.conv"), f);
            b.norm.visit(&format!("{prefix}.enc.{i}.norm"), f);
        }
        self.rnn.visit(&format!("{prefix}.rnn"), f);
        self.proj.visit(&format!("{prefix}.proj"), f);
        for (i, b) in self.dec.iter_mut().enumerate() {
            b.norm.visit(&format!("{prefix}.dec.{i}.norm"), f);
            b.conv.visit(&format!("{prefix}.dec.{i}.conv"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_traces_and_widths() {
        let crn = Crn::<f32>::new(CrnConfig::default()).unwrap();
        assert_eq!(crn.freq_trace(), &DEFAULT_FREQ_TRACE);
        assert_eq!(crn.decoder_trace(), alloc::vec![8, 18, 38, 79, 161]);
        assert_eq!(crn.decoder_output_padding(), alloc::vec![0, 0, 0, 1, 1]);
        assert_eq!(98 * 3, crn.config().lstm_input);
        assert_eq!(crn.tap_shape(Tap::B), (64, 18));
        assert_eq!(crn.tap_shape(Tap::C), (98, 3));
    }

    #[test]
    fn constructor_rejects_bad_ladders() {
        let mut cfg = CrnConfig::default();
        cfg.lstm_input = 300;
        assert!(Crn::<f32>::new(cfg).is_err());
        let mut cfg = CrnConfig::default();
        cfg.dec_channels[1] = 60;
        assert!(Crn::<f32>::new(cfg).is_err());
        let cfg = CrnConfig { freq_bins: 40, ..CrnConfig::default() };
        assert!(Crn::<f32>::new(cfg).is_err());
    }

    #[test]
    fn first_encoder_block_shape_and_zero_case() {
        let mut crn = Crn::<f32>::new(CrnConfig::default()).unwrap();
        let x = FeatureMap::zeros([1, 2, 101, 161]);
        let y = crn.encoder_block(0, &x, Mode::Eval).unwrap();
        assert_eq!(y.dims(), [1, 16, 101, 79]);
        // parameters are still at their fixed init (zero conv bias, unit BN)
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(crn.encoder_block(0, &FeatureMap::zeros([1, 3, 5, 161]), Mode::Eval).is_err());
    }

    #[test]
    fn recurrent_core_shapes() {
        let mut crn = Crn::<f32>::new(CrnConfig::default()).unwrap();
        let y = crn.recurrent_core(&FeatureMap::zeros([1, 98, 7, 3])).unwrap();
        assert_eq!(y.dims(), [1, 98, 7, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(crn.recurrent_core(&FeatureMap::zeros([1, 98, 7, 4])).is_err());
        let one = crn.recurrent_core(&FeatureMap::zeros([1, 98, 1, 3])).unwrap();
        assert_eq!(one.dims(), [1, 98, 1, 3]);
    }

    #[test]
    fn decoder_block_rejects_misaligned_skip() {
        let mut crn = Crn::<f32>::new(CrnConfig::default()).unwrap();
        let x = FeatureMap::zeros([1, 98, 4, 3]);
        assert!(crn.decoder_block(0, &x, &FeatureMap::zeros([1, 98, 5, 3]), Mode::Eval).is_err());
        let y = crn.decoder_block(0, &x, &FeatureMap::zeros([1, 98, 4, 3]), Mode::Eval).unwrap();
        assert_eq!(y.dims(), [1, 76, 4, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
