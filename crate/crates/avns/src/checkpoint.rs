//! The `AVNS` checkpoint file.
//!
//! Layout (little endian): magic `AVNS`, u32 version, u32 metadata length
//! and that many bytes of UTF-8 JSON, u32 tensor count, then per tensor a
//! u32 name length, the name, u32 rank, u32 dims and f32 data.

use std::path::Path;

use avns_core::crn::CrnConfig;
use avns_core::eval::{align_name, method_name, parse_align, parse_method, parse_tap, tap_name};
use avns_core::fusion::FusionConfig;
use avns_core::model::{ModelConfig, ModelParams, Subset, Tensor, TensorTable};
use avns_core::optim::{Adam, AdamConfig};
use avns_core::signal::StftConfig;
use avns_core::train::{Stage, TrainState};
use avns_core::visual::VisualConfig;
use avns_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

const MAGIC: &[u8; 4] = b"AVNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub location: String,
    pub align: String,
    pub method: String,
    pub heads: usize,
    pub attention_dim: usize,
}

impl From<&FusionConfig> for FusionSpec {
    fn from(f: &FusionConfig) -> Self {
        Self {
            location: tap_name(f.location).into(),
            align: align_name(f.align).into(),
            method: method_name(f.method).into(),
            heads: f.heads,
            attention_dim: f.attention_dim,
        }
    }
}

impl FusionSpec {
    pub fn to_config(&self) -> avns_core::Result<FusionConfig> {
        Ok(FusionConfig {
            location: parse_tap(&self.location)?,
            align: parse_align(&self.align)?,
            method: parse_method(&self.method)?,
            heads: self.heads,
            attention_dim: self.attention_dim,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualSpec {
    pub input_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub labels: usize,
}

/// Everything needed to rebuild the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub freq_bins: usize,
    pub enc_channels: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride_f: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub visual: Option<VisualSpec>,
    pub fusion: Option<FusionSpec>,
    pub aed: bool,
}

impl From<&ModelConfig> for ModelSpec {
    fn from(m: &ModelConfig) -> Self {
        Self {
            freq_bins: m.crn.freq_bins,
            enc_channels: m.crn.enc_channels.clone(),
            kernel: m.crn.kernel,
            stride_f: m.crn.stride_f,
            lstm_layers: m.crn.lstm_layers,
            lstm_hidden: m.crn.lstm_hidden,
            visual: m.visual.map(|v| VisualSpec {
                input_dim: v.input_dim,
                layers: v.lstm_layers,
                hidden: v.lstm_hidden,
                labels: v.num_labels,
            }),
            fusion: m.fusion.as_ref().map(FusionSpec::from),
            aed: m.aed,
        }
    }
}

impl ModelSpec {
    pub fn to_config(&self) -> avns_core::Result<ModelConfig> {
        let base = CrnConfig::with_ladder(self.freq_bins, &self.enc_channels, self.lstm_layers, self.lstm_hidden);
        let mut crn = CrnConfig { kernel: self.kernel, stride_f: self.stride_f, ..base };
        if let Ok(trace) = crn.freq_trace() {
            crn.lstm_input = self.enc_channels.last().copied().unwrap_or(0) * trace.last().copied().unwrap_or(0);
        }
        let cfg = ModelConfig {
            crn,
            visual: self.visual.as_ref().map(|v| VisualConfig {
                input_dim: v.input_dim,
                lstm_layers: v.layers,
                lstm_hidden: v.hidden,
                num_labels: v.labels,
            }),
            fusion: self.fusion.as_ref().map(FusionSpec::to_config).transpose()?,
            aed: self.aed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::AudioOnly => "audio",
        Stage::AudioVisual => "av",
        Stage::AudioVisualMtl => "av-mtl",
    }
}

pub fn parse_stage(s: &str) -> Option<Stage> {
    match s {
        "audio" => Some(Stage::AudioOnly),
        "av" => Some(Stage::AudioVisual),
        "av-mtl" => Some(Stage::AudioVisualMtl),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub model: ModelSpec,
    pub step: u64,
    /// `None` before the first step.
    pub best_loss: Option<f64>,
    pub seed: u64,
    /// STFT hop the model was trained with.
    #[serde(default = "default_hop")]
    pub hop: usize,
}

fn default_hop() -> usize {
    StftConfig::default().hop
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Model tensors plus optimizer moments under `adam.`.
    pub tensors: TensorTable,
}

impl Checkpoint {
    pub fn capture<S: Scalar>(stage: Stage, model: &mut ModelParams<S>, opt: Option<&Adam<S>>, state: TrainState, seed: u64, hop: usize) -> Self {
        let mut tensors = model.export();
        if let Some(o) = opt {
            let moments = o.export(&tensors);
            tensors.extend(moments);
        }
        let meta = CheckpointMeta {
            stage: stage_name(stage).into(),
            model: ModelSpec::from(model.config()),
            step: state.step,
            best_loss: state.best_loss.is_finite().then_some(state.best_loss),
            seed,
            hop,
        };
        Self { meta, tensors }
    }

    pub fn stage(&self) -> Option<Stage> {
        parse_stage(&self.meta.stage)
    }

    pub fn model_config(&self) -> avns_core::Result<ModelConfig> {
        self.meta.model.to_config()
    }

    pub fn model<S: Scalar>(&self) -> avns_core::Result<ModelParams<S>> {
        let mut m = ModelParams::new(self.model_config()?)?;
        m.import(&self.tensors, &Subset::ALL)?;
        Ok(m)
    }

    pub fn optimizer<S: Scalar>(&self, cfg: AdamConfig) -> avns_core::Result<Adam<S>> {
        Adam::import(cfg, &self.tensors)
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig { n_fft: (self.meta.model.freq_bins - 1) * 2, hop: self.meta.hop, ..StftConfig::default() }
    }

    pub fn train_state(&self) -> TrainState {
        TrainState { step: self.meta.step, best_loss: self.meta.best_loss.unwrap_or(f64::INFINITY) }
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic, expected AVNS".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| format!("metadata: {e}"))?;
        let count = r.u32()?;
        let mut tensors = TensorTable::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor size overflows")?;
            let raw = r.take(n.checked_mul(4).ok_or("tensor size overflows")?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(format!("duplicate tensor {name}"));
            }
        }
        if r.at != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.at));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| AppError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
        Self::decode(&bytes).map_err(|m| AppError::format(path, m))
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len()).ok_or("truncated checkpoint")?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
