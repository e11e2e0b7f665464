#![allow(dead_code)]

use avns_core::crn::CrnConfig;
use avns_core::data::{generate_synthetic_corpus, mix_pair, SynthConfig};
use avns_core::fusion::{Alignment, FusionConfig, FusionMethod};
use avns_core::crn::Tap;
use avns_core::rng::indexed;
use avns_core::signal::{Stft, StftConfig};
use avns_core::train::TrainExample;
use avns_core::visual::VisualConfig;

pub const LABELS: usize = 3;
pub const FEATURE_DIM: usize = 6;

pub fn tiny_crn() -> CrnConfig {
    CrnConfig::with_ladder(161, &[4, 8, 8], 1, 8)
}

pub fn tiny_visual() -> VisualConfig {
    VisualConfig { input_dim: FEATURE_DIM, lstm_layers: 1, lstm_hidden: 8, num_labels: LABELS }
}

pub fn fusion(location: Tap) -> FusionConfig {
    FusionConfig { heads: 2, attention_dim: 8, ..FusionConfig::new(location, Alignment::Upsample, FusionMethod::Concat) }
}

/// Mixed synthetic examples of `secs` seconds with visual features and labels.
pub fn examples(n: usize, secs: f64, seed: u64) -> Vec<TrainExample> {
    let cfg = SynthConfig { duration_secs: secs, num_labels: LABELS, feature_dim: FEATURE_DIM, ..SynthConfig::default() };
    let stft = Stft::new(StftConfig::default()).unwrap();
    generate_synthetic_corpus(n, &cfg, seed)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mix = mix_pair(&ex.clean, &ex.noise, None, &mut indexed(seed, "mix", i as u64)).unwrap();
            TrainExample::new(&stft, ex.id, mix.noisy, mix.clean, Some(ex.features), Some(ex.labels.as_targets())).unwrap()
        })
        .collect()
}
