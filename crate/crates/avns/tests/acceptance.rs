//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p avns --test acceptance` runs everything; append
//! `-- 4 7` to run selected criteria only.

use std::path::Path;
use std::time::Instant;

use avns::config::RunConfig;
use avns::dataset::load_all;
use avns::manifest::read_manifest;
use avns::runner::{self, AblateArgs, TrainArgs};
use avns_core::crn::{Crn, CrnConfig, Tap};
use avns_core::data::{mix_pair, sample_snr, SynthConfig};
use avns_core::fusion::{upsample_indices, Alignment, FusionConfig, FusionMethod};
use avns_core::gradcheck::{check_model, GradCheckOptions};
use avns_core::losses::{bce_multilabel, ns_loss, si_sdr, total_mtl_loss, weighted_stft_loss, LossWeights};
use avns_core::model::{init_av_from_audio, ModelConfig, ModelParams, Subset, TensorTable};
use avns_core::nn::{Mode, MultiHeadAttention};
use avns_core::rng::stream;
use avns_core::signal::{Magnitude, Stft, StftConfig, Waveform};
use avns_core::tensor::FeatureMap;
use avns_core::train::{Stage, StepLog, TrainConfig, TrainExample, Trainer};
use avns_core::visual::{VisualConfig, VisualFeatureSequence};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn crn_trace() -> Outcome {
    let cfg = CrnConfig::default();
    let trace = cfg.validate().map_err(fail)?;
    ensure!(trace == [161, 79, 38, 18, 8, 3], "trace {trace:?}");
    ensure!(cfg.enc_channels[4] * trace[5] == cfg.lstm_input && cfg.lstm_input == 294 && cfg.lstm_hidden == 294, "lstm sizes {} {}", cfg.lstm_input, cfg.lstm_hidden);
    ensure!(cfg.enc_channels == [16, 32, 64, 76, 98], "encoder {:?}", cfg.enc_channels);
    ensure!(cfg.dec_channels == [76, 64, 32, 16, 2], "decoder {:?}", cfg.dec_channels);
    let mut crn = Crn::<f32>::new(cfg.clone()).map_err(fail)?;
    let mut r = stream(1, "acc-crn");
    let x = FeatureMap::from_vec([1, 2, 9, 161], (0..2 * 9 * 161).map(|_| r.random_range(-1.0f32..1.0)).collect()).map_err(fail)?;
    let out = crn.forward(&x, Mode::Eval, None).map_err(fail)?;
    ensure!(out.mask.dims() == [1, 2, 9, 161], "mask dims {:?}", out.mask.dims());
    let bad = CrnConfig { freq_bins: 40, ..cfg };
    ensure!(Crn::<f32>::new(bad).is_err(), "a broken trace constructed");
    Ok("161->79->38->18->8->3, 98x3 = 294".into())
}

fn stft_round_trip() -> Outcome {
    let stft = Stft::new(StftConfig::default()).map_err(fail)?;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mut r = stream(i, "acc-stft");
        let scale = 10f64.powf(r.random_range(-3.0..1.0));
        let w = Waveform::new((0..16_000).map(|_| r.random_range(-scale..scale)).collect()).map_err(fail)?;
        let back = stft.istft(&stft.stft(&w).map_err(fail)?, w.len()).map_err(fail)?;
        let err = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err / w.peak());
    }
    ensure!(worst <= 1e-6, "relative error {worst:e}");
    Ok(format!("worst relative error {worst:.1e}"))
}

fn loss_oracles() -> Outcome {
    let (frames, bins) = (11, 161);
    let zeros = Magnitude { frames, bins, data: vec![0.0; frames * bins] };
    let ones = Magnitude { frames, bins, data: vec![1.0; frames * bins] };
    let w = weighted_stft_loss(&zeros, &ones, &[0.1, 1.0, 1.5, 1.5]).map_err(fail)?;
    ensure!((w - 4.1).abs() <= 1e-9, "weighted STFT loss {w}");

    let zero_db = si_sdr(&[1.0, 0.0], &[1.0, 1.0], 1e-8).map_err(fail)?;
    ensure!(zero_db.abs() <= 1e-6, "[1,0] vs [1,1]: {zero_db}");
    let orth = si_sdr(&[1.0, 0.0], &[0.0, 1.0], 1e-8).map_err(fail)?;
    ensure!(orth < -70.0, "orthogonal case {orth}");
    let mut r = stream(2, "acc-sisdr");
    let mut drift = 0.0f64;
    for _ in 0..50 {
        let s: Vec<f64> = (0..1000).map(|_| r.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = s.iter().map(|v| v + r.random_range(-0.5..0.5)).collect();
        let base = si_sdr(&s, &e, 1e-8).map_err(fail)?;
        for c in [0.1, 0.5, 3.0, 10.0] {
            let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
            drift = drift.max((si_sdr(&s, &scaled, 1e-8).map_err(fail)? - base).abs());
        }
    }
    ensure!(drift <= 1e-6, "scale drift {drift:e} dB");

    let bce = bce_multilabel(&[0.0; 7], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0]).map_err(fail)?;
    ensure!((bce - std::f64::consts::LN_2).abs() <= 1e-9, "bce {bce}");

    let stft = Stft::new(StftConfig::default()).map_err(fail)?;
    let clean: Vec<f64> = (0..4000).map(|_| r.random_range(-0.5..0.5)).collect();
    let est: Vec<f64> = clean.iter().map(|v| 0.7 * v + r.random_range(-0.1..0.1)).collect();
    let lw = LossWeights { alpha2: 0.0, ..LossWeights::default() };
    let ns = ns_loss(&stft, &clean, &est, &lw).map_err(fail)?.total;
    let total = total_mtl_loss(ns, 0.9, &lw);
    ensure!(total.to_bits() == ns.to_bits(), "alpha2 = 0 total {total} vs {ns}");
    Ok(format!("4.1 within {:.0e}, scale drift {drift:.1e} dB, ln 2, alpha2 = 0 bit-exact", (w - 4.1).abs()))
}

fn gradient_check() -> Outcome {
    let crn = CrnConfig::with_ladder(33, &[4, 8], 1, 16);
    let visual = VisualConfig { input_dim: 5, lstm_layers: 1, lstm_hidden: 6, num_labels: 3 };
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (seed, tap) in [(1u64, Tap::A), (2, Tap::B), (3, Tap::D)] {
        let fusion = FusionConfig { heads: 2, attention_dim: 8, ..FusionConfig::new(tap, Alignment::Attention, FusionMethod::Concat) };
        let cfg = ModelConfig::audio_visual(crn.clone(), visual, fusion, true);
        let rep = check_model(cfg, seed, GradCheckOptions::default()).map_err(fail)?;
        lines.push(format!("seed {seed}: {} coords, worst {:.1e} ({})", rep.checked, rep.worst, rep.worst_param));
        if rep.failures > 0 {
            failed.push(format!("seed {seed}: {} failures", rep.failures));
        }
    }
    ensure!(failed.is_empty(), "{}; {}", failed.join(", "), lines.join("; "));
    Ok(lines.join("; "))
}

fn random_visual(r: &mut avns_core::rng::Rng, frames: usize, dim: usize) -> VisualFeatureSequence {
    let data = (0..frames * dim).map(|_| r.random_range(-2.0f32..2.0)).collect();
    VisualFeatureSequence::new(frames, dim, data, 2.0, false).expect("finite")
}

fn fusion_transparency() -> Outcome {
    let crn = CrnConfig::default();
    let mut audio = ModelParams::<f32>::initialized(ModelConfig::audio_only(crn.clone()), 5).map_err(fail)?;
    let table = audio.export();
    let mut r = stream(5, "acc-transparency");
    let inputs: Vec<(FeatureMap<f32>, VisualFeatureSequence)> = (0..10)
        .map(|_| {
            let t = r.random_range(4..30);
            let spec = FeatureMap::from_vec([1, 2, t, 161], (0..2 * t * 161).map(|_| r.random_range(-3.0f32..3.0)).collect()).unwrap();
            let tv = r.random_range(1..8);
            (spec, random_visual(&mut r, tv, 16))
        })
        .collect();
    let reference: Vec<Vec<u32>> = inputs
        .iter()
        .map(|(x, _)| audio.forward(x, None, Mode::Eval).map(|o| o.mask.data().iter().map(|v| v.to_bits()).collect()))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let mut combos = 0;
    for tap in Tap::ALL {
        for method in [FusionMethod::Add, FusionMethod::Concat] {
            for align in [Alignment::Upsample, Alignment::Attention] {
                let cfg = ModelConfig::audio_visual(crn.clone(), VisualConfig::new(16, 5), FusionConfig::new(tap, align, method), true);
                let mut av = init_av_from_audio::<f32>(&table, cfg, 5).map_err(fail)?;
                for (i, (x, v)) in inputs.iter().enumerate() {
                    let out = av.forward(x, Some(&[v]), Mode::Eval).map_err(fail)?;
                    let bits: Vec<u32> = out.mask.data().iter().map(|v| v.to_bits()).collect();
                    ensure!(bits == reference[i], "{tap:?}/{method:?}/{align:?} differs on input {i}");
                }
                combos += 1;
            }
        }
    }
    Ok(format!("{combos} combinations x {} inputs bit-identical", inputs.len()))
}

/// Dense attention written out directly: no max shift, explicit loops.
fn attention_oracle(a: &MultiHeadAttention<f64>, q: &[f64], kv: &[f64], batch: usize, t_q: usize, t_kv: usize) -> Vec<f64> {
    let lin = |l: &avns_core::nn::Linear<f64>, x: &[f64]| -> Vec<f64> {
        (0..l.out_dim).map(|o| l.bias.value[o] + (0..l.in_dim).map(|i| l.weight.value[o * l.in_dim + i] * x[i]).sum::<f64>()).collect()
    };
    let (dq, dkv, dm, h) = (a.query.in_dim, a.key.in_dim, a.model_dim, a.heads);
    let dh = dm / h;
    let mut out = Vec::new();
    for b in 0..batch {
        let keys: Vec<Vec<f64>> = (0..t_kv).map(|j| lin(&a.key, &kv[(b * t_kv + j) * dkv..][..dkv])).collect();
        let vals: Vec<Vec<f64>> = (0..t_kv).map(|j| lin(&a.value, &kv[(b * t_kv + j) * dkv..][..dkv])).collect();
        for i in 0..t_q {
            let qi = lin(&a.query, &q[(b * t_q + i) * dq..][..dq]);
            let mut ctx = vec![0.0; dm];
            for hd in 0..h {
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|k| ((hd * dh..(hd + 1) * dh).map(|c| qi[c] * k[c]).sum::<f64>() / (dh as f64).sqrt()).exp())
                    .collect();
                let z: f64 = scores.iter().sum();
                for (j, s) in scores.iter().enumerate() {
                    for c in hd * dh..(hd + 1) * dh {
                        ctx[c] += s / z * vals[j][c];
                    }
                }
            }
            out.extend(lin(&a.out, &ctx));
        }
    }
    out
}

fn alignment() -> Outcome {
    let mut r = stream(6, "acc-align");
    for _ in 0..1000 {
        let (t_v, t_a) = (r.random_range(1..500usize), r.random_range(1..3000usize));
        let idx = upsample_indices(t_v, t_a).map_err(fail)?;
        ensure!(idx.len() == t_a, "length for ({t_v}, {t_a})");
        for (t, &i) in idx.iter().enumerate() {
            ensure!(i == t * t_v / t_a, "index {t} of ({t_v}, {t_a}) is {i}");
        }
        ensure!(idx.windows(2).all(|w| w[0] <= w[1]), "not monotone for ({t_v}, {t_a})");
    }
    let (mut worst_sum, mut worst_diff) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (batch, t_q, t_kv, heads) = (r.random_range(1..3), r.random_range(1..9), r.random_range(1..9), r.random_range(1..4));
        let (dq, dkv) = (r.random_range(1..7), r.random_range(1..7));
        let mut a = MultiHeadAttention::<f64>::new(dq, dkv, 2 * heads, heads).map_err(fail)?;
        for l in [&mut a.query, &mut a.key, &mut a.value, &mut a.out] {
            l.weight.value.iter_mut().chain(l.bias.value.iter_mut()).for_each(|v| *v = r.random_range(-1.0..1.0));
        }
        let q: Vec<f64> = (0..batch * t_q * dq).map(|_| r.random_range(-2.0..2.0)).collect();
        let kv: Vec<f64> = (0..batch * t_kv * dkv).map(|_| r.random_range(-2.0..2.0)).collect();
        let y = a.forward(&q, &kv, batch, t_q, t_kv).map_err(fail)?;
        for row in a.weights().chunks(t_kv) {
            worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let o = attention_oracle(&a, &q, &kv, batch, t_q, t_kv);
        worst_diff = y.iter().zip(&o).map(|(a, b)| (a - b).abs()).fold(worst_diff, f64::max);
    }
    ensure!(worst_sum <= 1e-6, "row sums off by {worst_sum:e}");
    ensure!(worst_diff <= 1e-6, "oracle differs by {worst_diff:e}");
    Ok(format!("1000 index maps exact; rows sum to 1 within {worst_sum:.0e}; oracle within {worst_diff:.0e}"))
}

fn mixer() -> Outcome {
    let mut r = stream(7, "acc-mixer");
    let mut worst = 0.0f64;
    for snr in [-20.0, -10.0, 0.0, 10.0, 20.0] {
        for _ in 0..100 {
            let n_clean = r.random_range(800..16_000);
            let n_noise = r.random_range(400..20_000);
            let clean = Waveform::new((0..n_clean).map(|_| r.random_range(-1.0..1.0)).collect()).map_err(fail)?;
            let noise = Waveform::new((0..n_noise).map(|_| r.random_range(-0.1..0.1)).collect()).map_err(fail)?;
            let m = mix_pair(&clean, &noise, Some(snr), &mut r).map_err(fail)?;
            let e = |w: &Waveform| w.samples().iter().map(|v| v * v).sum::<f64>();
            ensure!(m.noisy.len() == n_clean, "mix length");
            worst = worst.max((10.0 * (e(&m.clean) / e(&m.noise)).log10() - snr).abs());
        }
    }
    ensure!(worst < 0.01, "SNR error {worst} dB");
    let xs: Vec<f64> = (0..100_000).map(|_| sample_snr(&mut r)).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    ensure!(mean.abs() <= 0.1 && (std - 5.0).abs() <= 0.1, "sampled SNR mean {mean}, std {std}");
    Ok(format!("worst SNR error {worst:.1e} dB; sampled SNR mean {mean:.3}, std {std:.3}"))
}

fn corpus(dir: &Path, n: usize, secs: f64) -> Result<std::path::PathBuf, String> {
    let cfg = SynthConfig { duration_secs: secs, ..SynthConfig::default() };
    runner::gen(&dir.join("corpus"), n, 7, &cfg).map_err(fail)
}

fn train_stage(dir: &Path, manifest: &Path, stage: Stage, init: Option<&str>, name: &str, sets: &[&str]) -> Result<runner::TrainSummary, String> {
    let mut all = vec![format!("checkpoint={}", dir.join(name).display())];
    all.extend(sets.iter().map(|s| s.to_string()));
    let args = TrainArgs {
        manifest: manifest.to_path_buf(),
        stage: Some(stage),
        init: init.map(|i| dir.join(i)),
        sets: all,
        ..TrainArgs::default()
    };
    runner::train(&args).map_err(fail)
}

fn overfit() -> Outcome {
    let tmp = tempfile::tempdir().map_err(fail)?;
    let dir = tmp.path();
    let manifest = corpus(dir, 4, 0.25)?;
    let audio = train_stage(dir, &manifest, Stage::AudioOnly, None, "audio.ckpt", &["max_steps=300"])?;
    let ratio = audio.final_eval.loss / audio.initial_eval.loss;
    ensure!(ratio <= 0.1, "audio loss {} -> {} (ratio {ratio:.3})", audio.initial_eval.loss, audio.final_eval.loss);

    train_stage(dir, &manifest, Stage::AudioVisual, Some("audio.ckpt"), "av.ckpt", &["max_steps=500"])?;
    let av = runner::evaluate(&dir.join("av.ckpt"), &manifest, None, None).map_err(fail)?;
    let av_gain = av.report.aggregate.si_sdr_improvement.mean;
    ensure!(av.report.aggregate.count == 4 && av_gain >= 10.0, "AV improvement {av_gain:.2} dB");

    train_stage(dir, &manifest, Stage::AudioVisualMtl, Some("audio.ckpt"), "mtl.ckpt", &["max_steps=500"])?;
    let mtl = runner::evaluate(&dir.join("mtl.ckpt"), &manifest, None, None).map_err(fail)?;
    let f1 = mtl.report.aed.as_ref().map(|a| a.micro_f1).ok_or("no AED metrics")?;
    let mtl_gain = mtl.report.aggregate.si_sdr_improvement.mean;
    ensure!(f1 >= 0.9, "AED F1 {f1:.3}");
    ensure!(mtl_gain >= 10.0, "MTL improvement {mtl_gain:.2} dB");
    Ok(format!(
        "audio loss ratio {ratio:.4}; AV improvement {av_gain:.1} dB; MTL improvement {mtl_gain:.1} dB, AED micro-F1 {f1:.3}"
    ))
}

fn staging_examples(n: usize) -> Result<Vec<TrainExample>, String> {
    let tmp = tempfile::tempdir().map_err(fail)?;
    let manifest = corpus(tmp.path(), n, 0.25)?;
    let stft = Stft::new(StftConfig::default()).map_err(fail)?;
    let m = read_manifest(&manifest).map_err(fail)?;
    Ok(load_all(&m, &stft, 3, Some(5)).map_err(fail)?.into_iter().map(|l| l.example).collect())
}

fn run_stage(model: ModelParams<f32>, cfg: TrainConfig, ex: &[TrainExample]) -> Result<(Vec<StepLog>, TensorTable), String> {
    let mut t = Trainer::new(cfg, model).map_err(fail)?;
    let mut logs = Vec::new();
    t.run(ex, &mut |l, _| {
        logs.push(*l);
        Ok(())
    })
    .map_err(fail)?;
    Ok((logs, t.model.export()))
}

fn part(t: &TensorTable, s: Subset) -> Vec<(String, Vec<u32>)> {
    t.iter().filter(|(k, _)| Subset::of(k) == Some(s)).map(|(k, v)| (k.clone(), v.data.iter().map(|x| x.to_bits()).collect())).collect()
}

fn freeze_and_staging() -> Outcome {
    let ex = staging_examples(4)?;
    let run_cfg = RunConfig::default();
    let crn = run_cfg.crn_config().map_err(fail)?;
    let table = ModelParams::<f32>::initialized(ModelConfig::audio_only(crn.clone()), 3).map_err(fail)?.export();
    let model = |aed: bool| {
        let cfg = run_cfg.model_config(if aed { Stage::AudioVisualMtl } else { Stage::AudioVisual }, 16).expect("config");
        init_av_from_audio::<f32>(&table, cfg, 3)
    };
    let base = TrainConfig { batch_size: 2, max_steps: 50, checkpoint_every: 1, seed: 3, ..run_cfg.train_config(Stage::AudioVisual).map_err(fail)? };

    let frozen_cfg = TrainConfig { stage: Stage::AudioVisualMtl, freeze_visual_steps: 50, ..base.clone() };
    let start = model(true).map_err(fail)?.export();
    let (_, frozen) = run_stage(model(true).map_err(fail)?, frozen_cfg, &ex)?;
    ensure!(part(&start, Subset::Visual) == part(&frozen, Subset::Visual), "visual encoder moved while frozen");
    ensure!(part(&start, Subset::Crn) != part(&frozen, Subset::Crn), "CRN did not train");
    let free_cfg = TrainConfig { stage: Stage::AudioVisualMtl, max_steps: 5, ..base.clone() };
    let (_, free) = run_stage(model(true).map_err(fail)?, free_cfg, &ex)?;
    ensure!(part(&start, Subset::Visual) != part(&free, Subset::Visual), "visual encoder does not train when unfrozen");

    let mut zero = base.clone();
    zero.loss_weights.alpha2 = 0.0;
    let (av_logs, av) = run_stage(model(false).map_err(fail)?, TrainConfig { stage: Stage::AudioVisual, ..zero.clone() }, &ex)?;
    let (mtl_logs, mtl) = run_stage(model(true).map_err(fail)?, TrainConfig { stage: Stage::AudioVisualMtl, ..zero }, &ex)?;
    ensure!(av_logs.len() == 50, "{} logs", av_logs.len());
    if let Some(i) = av_logs.iter().zip(&mtl_logs).position(|(a, b)| a != b) {
        return Err(format!("trajectories split at step {i}: {:?} vs {:?}", av_logs[i], mtl_logs[i]));
    }
    for s in [Subset::Crn, Subset::Visual, Subset::Fusion] {
        ensure!(part(&av, s) == part(&mtl, s), "{s:?} parameters differ after 50 steps");
    }
    Ok("frozen visual encoder bit-identical over 50 steps; alpha2 = 0 trajectory identical for 50 steps".into())
}

fn ablation() -> Outcome {
    let tmp = tempfile::tempdir().map_err(fail)?;
    let dir = tmp.path();
    let manifest = corpus(dir, 4, 0.5)?;
    train_stage(dir, &manifest, Stage::AudioOnly, None, "audio.ckpt", &["max_steps=50"])?;
    let args = AblateArgs {
        manifest: manifest.clone(),
        init: dir.join("audio.ckpt"),
        grid: "loc=A,B,C,D;method=concat;align=upsample".into(),
        steps: Some(50),
        ..AblateArgs::default()
    };
    let report = runner::ablate(&args).map_err(fail)?;
    let out = dir.join("report/ablation.json");
    runner::write_ablation(&report, &out).map_err(fail)?;
    ensure!(report.cells.len() == 4, "{} cells", report.cells.len());
    for c in &report.cells {
        ensure!(c.error.is_none(), "cell failed: {:?}", c.error);
        ensure!(c.mean_si_sdr_improvement.is_finite() && c.steps_trained == 50, "cell {c:?}");
        ensure!(c.step0_si_sdr_improvement == report.cells[0].step0_si_sdr_improvement, "step-0 improvements differ");
    }
    let svg = std::fs::read_to_string(out.with_extension("svg")).map_err(fail)?;
    ensure!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\"") && svg.trim_end().ends_with("</svg>"), "svg framing");
    ensure!(svg.matches("<rect").count() == 4 && svg.matches("<text").count() == svg.matches("</text>").count(), "svg body");
    let csv = std::fs::read_to_string(out.with_extension("csv")).map_err(fail)?;
    let rows: Vec<&str> = csv.lines().collect();
    ensure!(rows.len() == 5 && rows.iter().all(|r| r.split(',').count() == 7), "csv shape");
    for row in &rows[1..] {
        ensure!(row.split(',').nth(1).and_then(|v| v.parse::<f64>().ok()).is_some_and(f64::is_finite), "csv value in {row}");
    }
    let cells: Vec<String> = report.cells.iter().map(|c| format!("{:.2}", c.mean_si_sdr_improvement)).collect();
    Ok(format!("4 finite cells [{}] dB from a shared step-0 of {:.2} dB", cells.join(", "), report.cells[0].step0_si_sdr_improvement))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("default CRN frequency trace", crn_trace),
        ("STFT round trip", stft_round_trip),
        ("loss oracles", loss_oracles),
        ("gradient check", gradient_check),
        ("fusion transparency", fusion_transparency),
        ("alignment properties", alignment),
        ("mixer exactness", mixer),
        ("overfit end to end", overfit),
        ("freeze and staging contracts", freeze_and_staging),
        ("ablation harness", ablation),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {n:>2} {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {n:>2} {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
