//! Training stages: audio-only pretraining, audio-visual fine-tuning with
//! a frozen-then-released visual encoder, and the multi-task variant.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::invalid;
use crate::fusion::FusionConfig;
use crate::losses::{bce_multilabel, bce_multilabel_grad, ns_loss_grad, total_mtl_loss, LossWeights};
use crate::model::{ModelParams, Subset};
use crate::nn::Mode;
use crate::optim::{Adam, AdamConfig};
use crate::rng::indexed;
use crate::signal::{apply_mask, ComplexSpectrogram, Stft, StftConfig, Waveform};
use crate::tensor::FeatureMap;
use crate::visual::VisualFeatureSequence;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    AudioOnly,
    AudioVisual,
    AudioVisualMtl,
}

impl Stage {
    pub fn uses_visual(self) -> bool {
        self != Stage::AudioOnly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub fusion: FusionConfig,
    pub loss_weights: LossWeights,
    pub optimizer: AdamConfig,
    pub stft: StftConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Visual encoder parameters stay fixed for steps below this.
    pub freeze_visual_steps: u64,
    pub seed: u64,
    /// Log (and checkpoint) every this many steps.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::AudioOnly,
            fusion: FusionConfig::default(),
            loss_weights: LossWeights::default(),
            optimizer: AdamConfig::default(),
            stft: StftConfig::default(),
            batch_size: 4,
            max_steps: 300,
            freeze_visual_steps: 0,
            seed: 0,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        self.stft.validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !o.lr.is_finite() {
            return Err(invalid!("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(invalid!("betas must lie in [0, 1) and eps be positive"));
        }
        if o.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(invalid!("clip norm must be positive"));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(invalid!("batch size and checkpoint interval must be positive"));
        }
        Ok(())
    }
}

/// One mixed training example with its precomputed noisy spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub noisy: Waveform,
    pub clean: Waveform,
    pub noisy_spec: ComplexSpectrogram,
    pub visual: Option<VisualFeatureSequence>,
    /// Multilabel AED targets (0 or 1).
    pub labels: Option<Vec<f64>>,
}

impl TrainExample {
    pub fn new(
        stft: &Stft,
        id: impl Into<String>,
        noisy: Waveform,
        clean: Waveform,
        visual: Option<VisualFeatureSequence>,
        labels: Option<Vec<f64>>,
    ) -> Result<Self> {
        if noisy.len() != clean.len() {
            return Err(invalid!("noisy and clean lengths differ"));
        }
        let noisy_spec = stft.stft(&noisy)?;
        Ok(Self { id: id.into(), noisy, clean, noisy_spec, visual, labels })
    }
}

/// Batch-mean loss terms, each already multiplied by its weight so the
/// columns sum to `loss`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub l1: f64,
    pub wstft: f64,
    pub sisdr: f64,
    pub aed: f64,
}

/// Where a run stands; together with the parameters and optimizer state
/// this is everything needed to resume bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub best_loss: f64,
}

/// Example indices for `step`: a fresh permutation per epoch, keyed by
/// `(seed, epoch)`, so any step's batch is known without replaying.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if batch_size >= n {
        return (0..n).collect();
    }
    let per_epoch = n.div_ceil(batch_size) as u64;
    let (epoch, pos) = (step / per_epoch, (step % per_epoch) as usize);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut indexed(seed, "batch-order", epoch));
    order.into_iter().skip(pos * batch_size).take(batch_size).collect()
}

/// Stacks noisy spectrograms into a (batch, 2, frames, bins) map.
pub fn spectrogram_batch<S: Scalar>(examples: &[&TrainExample]) -> Result<FeatureMap<S>> {
    let first = examples.first().ok_or_else(|| invalid!("empty batch"))?;
    let (t, f) = (first.noisy_spec.frames(), first.noisy_spec.bins());
    let mut data = Vec::with_capacity(examples.len() * 2 * t * f);
    for ex in examples {
        if ex.noisy_spec.frames() != t || ex.noisy_spec.bins() != f {
            return Err(invalid!("examples in a batch must have equal lengths"));
        }
        data.extend(ex.noisy_spec.data().iter().map(|&v| S::of(v)));
    }
    FeatureMap::from_vec([examples.len(), 2, t, f], data)
}

fn visual_refs<'a>(examples: &[&'a TrainExample]) -> Result<Vec<&'a VisualFeatureSequence>> {
    examples
        .iter()
        .map(|e| e.visual.as_ref().ok_or_else(|| invalid!("example {} has no visual features", e.id)))
        .collect()
}

/// Runs the model and returns the enhanced waveforms for a batch.
pub fn enhance_batch<S: Scalar>(model: &mut ModelParams<S>, stft: &Stft, examples: &[&TrainExample], mode: Mode) -> Result<Vec<Waveform>> {
    let x = spectrogram_batch::<S>(examples)?;
    let vis = if model.visual.is_some() { Some(visual_refs(examples)?) } else { None };
    let out = model.forward(&x, vis.as_deref(), mode)?;
    examples
        .iter()
        .enumerate()
        .map(|(b, ex)| {
            let mask: Vec<f64> = out.mask.item(b).iter().map(|v| v.f64()).collect();
            stft.istft(&apply_mask(&ex.noisy_spec, &mask)?, ex.noisy.len())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Trainer<S> {
    pub cfg: TrainConfig,
    pub model: ModelParams<S>,
    pub optimizer: Adam<S>,
    stft: Stft,
    state: TrainState,
}

impl<S: Scalar> Trainer<S> {
    /// Checks that the model carries the parts the stage needs.
    pub fn new(cfg: TrainConfig, model: ModelParams<S>) -> Result<Self> {
        let optimizer = Adam::new(cfg.optimizer);
        Self::resume(cfg, model, optimizer, TrainState { step: 0, best_loss: f64::INFINITY })
    }

    pub fn resume(cfg: TrainConfig, model: ModelParams<S>, optimizer: Adam<S>, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        match cfg.stage {
            Stage::AudioOnly if model.visual.is_some() => return Err(invalid!("audio-only stage with a visual model")),
            Stage::AudioVisual | Stage::AudioVisualMtl if model.visual.is_none() || model.fusion.is_none() => {
                return Err(invalid!("audio-visual stages need a visual encoder and fusion block"))
            }
            Stage::AudioVisualMtl if model.aed.is_none() => return Err(Error::MissingHead),
            _ => {}
        }
        let stft = Stft::new(cfg.stft)?;
        Ok(Self { cfg, model, optimizer, stft, state })
    }

    pub fn state(&self) -> TrainState {
        self.state
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// One optimizer update on the batch chosen for the current step.
    pub fn train_step(&mut self, examples: &[TrainExample]) -> Result<StepLog> {
        let step = self.state.step;
        let idx = batch_indices(examples.len(), self.cfg.batch_size, self.cfg.seed, step);
        let batch: Vec<&TrainExample> = idx.iter().map(|&i| &examples[i]).collect();
        let log = self.accumulate(&batch, step)?;
        if self.model.visual.is_some() {
            self.model.set_frozen(Subset::Visual, step < self.cfg.freeze_visual_steps);
        }
        self.optimizer.step(&mut self.model, step)?;
        self.state.step += 1;
        self.state.best_loss = self.state.best_loss.min(log.loss);
        Ok(log)
    }

    /// Forward and backward on a batch, leaving gradients in the model.
    fn accumulate(&mut self, batch: &[&TrainExample], step: u64) -> Result<StepLog> {
        let w = self.cfg.loss_weights;
        let x = spectrogram_batch::<S>(batch)?;
        let vis = if self.model.visual.is_some() { Some(visual_refs(batch)?) } else { None };
        self.model.zero_grad();
        let out = self.model.forward(&x, vis.as_deref(), Mode::Train)?;
        let n = batch.len() as f64;
        let mut log = StepLog { step, ..StepLog::default() };
        let mut dmask = FeatureMap::<S>::zeros(out.mask.dims());
        for (b, ex) in batch.iter().enumerate() {
            let mask: Vec<f64> = out.mask.item(b).iter().map(|v| v.f64()).collect();
            let est = self.stft.istft(&apply_mask(&ex.noisy_spec, &mask)?, ex.noisy.len())?;
            let (terms, mut g) = ns_loss_grad(&self.stft, ex.clean.samples(), est.samples(), &w)?;
            log.l1 += w.alpha1 * w.lambda1 * terms.l1 / n;
            log.wstft += w.alpha1 * w.lambda2 * terms.wstft / n;
            log.sisdr -= w.alpha1 * w.lambda3 * terms.si_sdr / n;
            log.loss += total_mtl_loss(terms.total, 0.0, &w) / n;
            g.iter_mut().for_each(|v| *v *= w.alpha1 / n);
            let dspec = self.stft.istft_adjoint(&g, ex.noisy_spec.frames());
            for ((d, &gs), &xs) in dmask.item_mut(b).iter_mut().zip(dspec.data()).zip(ex.noisy_spec.data()) {
                *d = S::of(gs * xs);
            }
        }
        let dlogits = match (&out.aed_logits, self.cfg.stage) {
            (Some(z), Stage::AudioVisualMtl) => {
                let k = z.len() / batch.len();
                let mut d = Vec::with_capacity(z.len());
                for (b, ex) in batch.iter().enumerate() {
                    let y = ex.labels.as_ref().ok_or_else(|| invalid!("example {} has no AED labels", ex.id))?;
                    let zb: Vec<f64> = z[b * k..(b + 1) * k].iter().map(|v| v.f64()).collect();
                    let l = bce_multilabel(&zb, y)?;
                    log.aed += w.alpha2 * l / n;
                    log.loss += w.alpha2 * l / n;
                    d.extend(bce_multilabel_grad(&zb, y)?.into_iter().map(|g| S::of(g * w.alpha2 / n)));
                }
                Some(d)
            }
            _ => None,
        };
        if !log.loss.is_finite() {
            return Err(Error::Diverged { step, what: alloc::format!("loss {}", log.loss) });
        }
        self.model.backward(&dmask, dlogits.as_deref());
        Ok(log)
    }

    /// Trains until `max_steps`, handing every `checkpoint_every`-th log
    /// (and the last) to `on_log`.
    pub fn run(&mut self, examples: &[TrainExample], on_log: &mut dyn FnMut(&StepLog, &mut Self) -> Result<()>) -> Result<()> {
        if examples.is_empty() && self.state.step < self.cfg.max_steps {
            return Err(invalid!("no training examples"));
        }
        while self.state.step < self.cfg.max_steps {
            let log = self.train_step(examples)?;
            let done = self.state.step;
            if done % self.cfg.checkpoint_every == 0 || done == self.cfg.max_steps {
                on_log(&log, self)?;
            }
        }
        Ok(())
    }

    /// Batch-mean loss without updating anything (train-mode statistics
    /// are used but running statistics are restored afterwards).
    pub fn evaluate_loss(&mut self, examples: &[TrainExample]) -> Result<StepLog> {
        let refs: Vec<&TrainExample> = examples.iter().collect();
        let saved = self.model.clone();
        let log = self.accumulate(&refs, self.state.step);
        self.model = saved;
        log
    }
}
