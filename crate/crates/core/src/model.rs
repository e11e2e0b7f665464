//! The full model: CRN, optional visual encoder, fusion block and AED head,
//! with named parameters, seeded initialization and freezing.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;

use crate::crn::{Crn, CrnConfig, TapHook, TapSet};
use crate::error::{invalid, Error};
use crate::fusion::{Fusion, FusionConfig};
use crate::nn::{Init, Mode, Param, ParamKind, Visit};
use crate::rng::stream;
use crate::tensor::FeatureMap;
use crate::visual::{AedHead, VisualConfig, VisualEncoder, VisualFeatureSequence};
use crate::{Result, Scalar};

/// Top-level parameter groups; each name in [`ModelParams`] starts with
/// one of these prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    Crn,
    Visual,
    Fusion,
    Aed,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::Crn, Subset::Visual, Subset::Fusion, Subset::Aed];

    pub fn prefix(self) -> &'static str {
        match self {
            Subset::Crn => "crn",
            Subset::Visual => "visual",
            Subset::Fusion => "fusion",
            Subset::Aed => "aed",
        }
    }

    pub fn of(name: &str) -> Option<Subset> {
        let head = name.split('.').next()?;
        Self::ALL.into_iter().find(|s| s.prefix() == head)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub crn: CrnConfig,
    pub visual: Option<VisualConfig>,
    pub fusion: Option<FusionConfig>,
    /// Attach the AED head to the visual encoder.
    pub aed: bool,
}

impl ModelConfig {
    pub fn audio_only(crn: CrnConfig) -> Self {
        Self { crn, visual: None, fusion: None, aed: false }
    }

    pub fn audio_visual(crn: CrnConfig, visual: VisualConfig, fusion: FusionConfig, aed: bool) -> Self {
        Self { crn, visual: Some(visual), fusion: Some(fusion), aed }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.fusion.is_some() || self.aed) && self.visual.is_none() {
            return Err(invalid!("fusion and the AED head need a visual encoder"));
        }
        Ok(())
    }
}

/// A tensor with its shape, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named tensors, ordered by name.
pub type TensorTable = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
pub struct ModelOutput<S> {
    pub mask: FeatureMap<S>,
    pub taps: TapSet<S>,
    /// (batch, labels), present when the AED head exists.
    pub aed_logits: Option<Vec<S>>,
}

/// Every layer of the model. Parameter names are dotted paths such as
/// `crn.enc.0.conv.weight` or `visual.rnn.1.bwd.w_hh`.
#[derive(Debug, Clone)]
pub struct ModelParams<S> {
    cfg: ModelConfig,
    pub crn: Crn<S>,
    pub visual: Option<VisualEncoder<S>>,
    pub fusion: Option<Fusion<S>>,
    pub aed: Option<AedHead<S>>,
    frozen: [bool; 4],
    batch: usize,
}

impl<S: Scalar> ModelParams<S> {
    /// Builds the layers with their fixed (non-random) initial values.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let crn = Crn::new(cfg.crn.clone())?;
        let visual = cfg.visual.map(VisualEncoder::new).transpose()?;
        let fusion = match (cfg.fusion, cfg.visual) {
            (Some(fc), Some(vc)) => {
                let (ch, f) = crn.tap_shape(fc.location);
                Some(Fusion::new(fc, ch, f, vc.state_dim())?)
            }
            _ => None,
        };
        let aed = match (cfg.aed, cfg.visual) {
            (true, Some(vc)) => Some(AedHead::new(vc.state_dim(), vc.num_labels)),
            _ => None,
        };
        Ok(Self { cfg, crn, visual, fusion, aed, frozen: [false; 4], batch: 0 })
    }

    /// Builds and initializes: each randomly initialized tensor draws from
    /// its own stream keyed by `(seed, name)`, so shared layers start out
    /// identical across model variants.
    pub fn initialized(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        m.initialize(seed);
        Ok(m)
    }

    pub fn initialize(&mut self, seed: u64) {
        self.visit("", &mut |name, p| {
            p.reset_fixed();
            if let Init::Uniform(bound) = p.init {
                let mut r = stream(seed, name);
                for v in p.value.iter_mut() {
                    *v = S::of(r.random_range(-bound..=bound));
                }
            }
        });
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn set_frozen(&mut self, subset: Subset, frozen: bool) {
        self.frozen[subset as usize] = frozen;
    }

    pub fn is_frozen(&self, subset: Subset) -> bool {
        self.frozen[subset as usize]
    }

    /// Whether the optimizer should update the named parameter.
    pub fn is_trainable(&self, name: &str, kind: ParamKind) -> bool {
        self.trainable_filter()(name, kind)
    }

    /// A detached copy of [`Self::is_trainable`], usable while visiting.
    pub fn trainable_filter(&self) -> impl Fn(&str, ParamKind) -> bool + 'static {
        let frozen = self.frozen;
        move |name, kind| kind == ParamKind::Trainable && Subset::of(name).is_none_or(|s| !frozen[s as usize])
    }

    pub fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.zero_grad());
    }

    pub fn num_trainable(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.kind == ParamKind::Trainable {
                n += p.len()
            }
        });
        n
    }

    pub fn names(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |n, _| out.push(n.to_string()));
        out
    }

    /// Forward pass over a (batch, 2, frames, bins) spectrogram batch.
    pub fn forward(
        &mut self,
        spec: &FeatureMap<S>,
        visual: Option<&[&VisualFeatureSequence]>,
        mode: Mode,
    ) -> Result<ModelOutput<S>> {
        let batch = spec.batch();
        let mut aed_logits = None;
        if let Some(enc) = &mut self.visual {
            let seqs = visual.ok_or_else(|| invalid!("this model needs visual features"))?;
            if seqs.len() != batch {
                return Err(invalid!("{} visual sequences for a batch of {batch}", seqs.len()));
            }
            let (x, frames) = enc.batch_input(seqs)?;
            let states = enc.forward(&x, batch, frames)?;
            if let Some(f) = &mut self.fusion {
                f.set_visual(&states.states, frames)?;
            }
            if let Some(head) = &mut self.aed {
                aed_logits = Some(head.forward(&states.pooled, batch));
            }
        }
        let hook = self.fusion.as_mut().map(|f| f as &mut dyn TapHook<S>);
        let out = self.crn.forward(spec, mode, hook)?;
        self.batch = batch;
        Ok(ModelOutput { mask: out.mask, taps: out.taps, aed_logits })
    }

    /// Accumulates gradients for the last forward. `dlogits` is ignored
    /// when there is no AED head.
    pub fn backward(&mut self, dmask: &FeatureMap<S>, dlogits: Option<&[S]>) {
        let hook = self.fusion.as_mut().map(|f| f as &mut dyn TapHook<S>);
        self.crn.backward(dmask, hook);
        let frozen_visual = self.is_frozen(Subset::Visual);
        let Some(enc) = &mut self.visual else { return };
        let dpooled = match (&mut self.aed, dlogits) {
            (Some(head), Some(d)) => Some(head.backward(d)),
            _ => None,
        };
        let dstates = self.fusion.as_mut().map(|f| f.take_visual_grad());
        if frozen_visual {
            return;
        }
        let dstates = dstates.filter(|d| !d.is_empty());
        enc.backward(dstates.as_deref(), dpooled.as_deref());
    }

    /// Copies every parameter and buffer out as f32 tensors.
    pub fn export(&mut self) -> TensorTable {
        let mut t = TensorTable::new();
        self.visit("", &mut |n, p| {
            t.insert(
                n.to_string(),
                Tensor { shape: p.shape.clone(), data: p.value.iter().map(|v| v.f64() as f32).collect() },
            );
        });
        t
    }

    /// Loads tensors by name. Only names under `subsets` are required; a
    /// missing or misshapen tensor is an initialization error naming it.
    pub fn import(&mut self, table: &TensorTable, subsets: &[Subset]) -> Result<()> {
        let mut err = None;
        self.visit("", &mut |n, p| {
            if err.is_some() || !Subset::of(n).is_some_and(|s| subsets.contains(&s)) {
                return;
            }
            match table.get(n) {
                None => err = Some(Error::Init(alloc::format!("missing tensor {n}"))),
                Some(t) if t.shape != p.shape => {
                    err = Some(Error::Init(alloc::format!("tensor {n} has shape {:?}, expected {:?}", t.shape, p.shape)))
                }
                Some(t) => {
                    for (d, &s) in p.value.iter_mut().zip(&t.data) {
                        *d = S::of(s as f64);
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }
}

impl<S: Scalar> Visit<S> for ModelParams<S> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        let p = |s: Subset| crate::nn::join(prefix, s.prefix());
        self.crn.visit(&p(Subset::Crn), f);
        if let Some(v) = &mut self.visual {
            v.visit(&p(Subset::Visual), f);
        }
        if let Some(fu) = &mut self.fusion {
            fu.visit(&p(Subset::Fusion), f);
        }
        if let Some(a) = &mut self.aed {
            a.visit(&p(Subset::Aed), f);
        }
    }
}

/// An audio-visual model whose CRN is copied from a trained audio-only
/// model and whose new parts are freshly initialized from `seed`.
pub fn init_av_from_audio<S: Scalar>(audio: &TensorTable, cfg: ModelConfig, seed: u64) -> Result<ModelParams<S>> {
    let mut m = ModelParams::initialized(cfg, seed)?;
    m.import(audio, &[Subset::Crn])?;
    Ok(m)
}
