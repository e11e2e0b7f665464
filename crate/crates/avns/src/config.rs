//! Flat `key = value` run configuration with `#` comments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use avns_core::crn::CrnConfig;
use avns_core::eval::{parse_align, parse_method, parse_tap};
use avns_core::fusion::FusionConfig;
use avns_core::losses::LossWeights;
use avns_core::model::ModelConfig;
use avns_core::optim::AdamConfig;
use avns_core::signal::StftConfig;
use avns_core::train::{Stage, TrainConfig};
use avns_core::visual::VisualConfig;

use crate::error::{usage, AppError, Result};

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed for initialization, batching and mixing"),
    ("batch_size", "4", "examples per step"),
    ("max_steps", "300", "optimizer steps to run"),
    ("freeze_visual_steps", "0", "steps during which the visual encoder is frozen"),
    ("checkpoint_every", "50", "steps between checkpoints and log lines"),
    ("lr", "0.001", "learning rate"),
    ("beta1", "0.9", "first-moment decay"),
    ("beta2", "0.999", "second-moment decay"),
    ("adam_eps", "1e-8", "optimizer epsilon"),
    ("clip_norm", "5", "global gradient-norm clip, 0 disables"),
    ("lambda1", "1", "time-domain L1 weight"),
    ("lambda2", "22.62", "weighted STFT loss weight"),
    ("lambda3", "0.001", "negated SI-SDR weight"),
    ("band_weights", "0.1,1.0,1.5,1.5", "weights of the four frequency bands"),
    ("alpha1", "1", "enhancement task weight"),
    ("alpha2", "50", "AED task weight"),
    ("loss_eps", "1e-8", "SI-SDR stabilizer"),
    ("n_fft", "320", "STFT size"),
    ("hop", "160", "STFT hop"),
    ("crn.enc_channels", "16,32,64,76,98", "encoder channels; the decoder mirrors them"),
    ("crn.lstm_layers", "4", "bLSTM layers in the recurrent core"),
    ("crn.lstm_hidden", "294", "bLSTM hidden size per direction"),
    ("visual.layers", "2", "visual bLSTM layers"),
    ("visual.hidden", "128", "visual bLSTM hidden size per direction"),
    ("visual.labels", "5", "number of AED labels"),
    ("fusion.location", "B", "fusion tap: A input, B intermediate, C late, D mask"),
    ("fusion.align", "upsample", "upsample or attention"),
    ("fusion.method", "concat", "add or concat"),
    ("fusion.heads", "4", "attention heads"),
    ("fusion.attention_dim", "128", "attention model width"),
    ("checkpoint", "avns.ckpt", "checkpoint written by train"),
    ("log", "", "training CSV log; empty means the checkpoint path with .csv"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
    explicit: BTreeSet<&'static str>,
    overridden: BTreeSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, d, _)| (*k, d.to_string())).collect(), explicit: BTreeSet::new(), overridden: BTreeSet::new() }
    }
}

fn lookup(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|(k, _, _)| *k).find(|k| *k == key)
}

impl RunConfig {
    /// Parses config text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set(line).map_err(|e| usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies one `key=value` assignment; later assignments win.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| usage(format!("'{assignment}' is not key=value")))?;
        let key = lookup(k.trim()).ok_or_else(|| usage(format!("unknown config key '{}'", k.trim())))?;
        self.values.insert(key, v.trim().to_string());
        self.explicit.insert(key);
        Ok(())
    }

    /// Command-line assignments; unlike file keys they must matter for the
    /// stage being run.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            self.set(s)?;
            if let Some(k) = s.split_once('=').and_then(|(k, _)| lookup(k.trim())) {
                self.overridden.insert(k);
            }
        }
        self.validate()
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key).parse().map_err(|_| usage(format!("{key}: cannot parse '{}'", self.get(key))))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| usage(format!("{key}: cannot parse '{s}'"))))
            .collect()
    }

    /// Checks every value parses and the derived configs are consistent.
    pub fn validate(&self) -> Result<()> {
        self.build_train(Stage::AudioOnly)?;
        self.crn_config()?;
        self.fusion_config()?;
        self.num::<usize>("visual.layers")?;
        self.num::<usize>("visual.hidden")?;
        self.num::<usize>("visual.labels")?;
        Ok(())
    }

    pub fn fusion_config(&self) -> Result<FusionConfig> {
        Ok(FusionConfig {
            location: parse_tap(self.get("fusion.location"))?,
            align: parse_align(self.get("fusion.align"))?,
            method: parse_method(self.get("fusion.method"))?,
            heads: self.num("fusion.heads")?,
            attention_dim: self.num("fusion.attention_dim")?,
        })
    }

    pub fn crn_config(&self) -> Result<CrnConfig> {
        let bins = self.num::<usize>("n_fft")? / 2 + 1;
        let cfg = CrnConfig::with_ladder(bins, &self.list::<usize>("crn.enc_channels")?, self.num("crn.lstm_layers")?, self.num("crn.lstm_hidden")?);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model for `stage`; `feature_dim` is the visual input width.
    pub fn model_config(&self, stage: Stage, feature_dim: usize) -> Result<ModelConfig> {
        let crn = self.crn_config()?;
        if stage == Stage::AudioOnly {
            return Ok(ModelConfig::audio_only(crn));
        }
        let visual = VisualConfig {
            input_dim: feature_dim,
            lstm_layers: self.num("visual.layers")?,
            lstm_hidden: self.num("visual.hidden")?,
            num_labels: self.num("visual.labels")?,
        };
        Ok(ModelConfig::audio_visual(crn, visual, self.fusion_config()?, stage == Stage::AudioVisualMtl))
    }

    pub fn train_config(&self, stage: Stage) -> Result<TrainConfig> {
        if stage == Stage::AudioOnly {
            if let Some(k) = self.overridden.iter().find(|k| k.starts_with("fusion.") || k.starts_with("visual.")) {
                return Err(usage(format!("'{k}' has no effect in the audio-only stage")));
            }
        }
        self.build_train(stage)
    }

    fn build_train(&self, stage: Stage) -> Result<TrainConfig> {
        let bw: Vec<f64> = self.list("band_weights")?;
        let band_weights: [f64; 4] =
            bw.try_into().map_err(|_| usage("band_weights needs exactly four values"))?;
        let clip: f64 = self.num("clip_norm")?;
        let cfg = TrainConfig {
            stage,
            fusion: self.fusion_config()?,
            loss_weights: LossWeights {
                lambda1: self.num("lambda1")?,
                lambda2: self.num("lambda2")?,
                lambda3: self.num("lambda3")?,
                band_weights,
                alpha1: self.num("alpha1")?,
                alpha2: self.num("alpha2")?,
                epsilon: self.num("loss_eps")?,
            },
            optimizer: AdamConfig {
                lr: self.num("lr")?,
                beta1: self.num("beta1")?,
                beta2: self.num("beta2")?,
                eps: self.num("adam_eps")?,
                clip_norm: (clip > 0.0).then_some(clip),
            },
            stft: StftConfig { n_fft: self.num("n_fft")?, hop: self.num("hop")?, ..StftConfig::default() },
            batch_size: self.num("batch_size")?,
            max_steps: self.num("max_steps")?,
            freeze_visual_steps: self.num("freeze_visual_steps")?,
            seed: self.num("seed")?,
            checkpoint_every: self.num("checkpoint_every")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn checkpoint_path(&self) -> &str {
        self.get("checkpoint")
    }

    pub fn log_path(&self) -> String {
        match self.get("log") {
            "" => Path::new(self.checkpoint_path()).with_extension("csv").display().to_string(),
            p => p.to_string(),
        }
    }

    /// The config as text, one documented key per line.
    pub fn render(&self) -> String {
        KEYS.iter().map(|(k, _, doc)| format!("# {doc}\n{k} = {}\n", self.get(k))).collect()
    }
}
