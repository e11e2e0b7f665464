//! Objective metrics, evaluation reports and the fusion ablation grid.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::crn::Tap;
use crate::error::invalid;
use crate::fusion::{Alignment, FusionConfig, FusionMethod};
use crate::losses::si_sdr;
use crate::model::{init_av_from_audio, ModelConfig, ModelParams, TensorTable};
use crate::nn::Mode;
use crate::signal::{magnitude, Stft, Waveform};
use crate::tensor::sigmoid;
use crate::train::{enhance_batch, Stage, TrainConfig, TrainExample, Trainer};
use crate::{Result, Scalar};

/// Input-SNR buckets of the report, in dB.
pub const SNR_BUCKETS: [f64; 5] = [-20.0, -10.0, 0.0, 10.0, 20.0];
pub const SI_SDR_EPS: f64 = 1e-8;
pub const LSD_EPS: f64 = 1e-8;
/// AED decisions are positive when the probability is strictly above this.
pub const AED_THRESHOLD: f64 = 0.5;

/// Log-spectral distance in dB: RMS over time-frequency cells of the
/// log-magnitude ratio.
pub fn log_spectral_distance(stft: &Stft, clean: &Waveform, est: &Waveform) -> Result<f64> {
    if clean.len() != est.len() {
        return Err(invalid!("length mismatch: {} vs {}", clean.len(), est.len()));
    }
    let a = magnitude(&stft.stft(clean)?);
    let b = magnitude(&stft.stft(est)?);
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = 20.0 * libm::log10((x + LSD_EPS) / (y + LSD_EPS));
            d * d
        })
        .sum();
    Ok(libm::sqrt(sum / a.data.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub snr_in_db: Option<f64>,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub si_sdr_improvement: f64,
    pub lsd: f64,
    /// Example-level F1 of the predicted label set.
    pub aed_f1: Option<f64>,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        Self { mean, std: libm::sqrt(var) }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub count: usize,
    pub si_sdr_in: Stat,
    pub si_sdr_out: Stat,
    pub si_sdr_improvement: Stat,
    pub lsd: Stat,
}

impl Aggregate {
    pub fn of(records: &[&EvalRecord]) -> Self {
        let it = |f: fn(&EvalRecord) -> f64| Stat::of(records.iter().map(move |r| f(r)));
        Self {
            count: records.len(),
            si_sdr_in: it(|r| r.si_sdr_in),
            si_sdr_out: it(|r| r.si_sdr_out),
            si_sdr_improvement: it(|r| r.si_sdr_improvement),
            lsd: it(|r| r.lsd),
        }
    }
}

/// Nearest report bucket for an input SNR.
pub fn snr_bucket(snr_db: f64) -> f64 {
    SNR_BUCKETS.into_iter().min_by(|a, b| (a - snr_db).abs().total_cmp(&(b - snr_db).abs())).expect("non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AedMetrics {
    pub per_label: Vec<LabelMetrics>,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    (p, r, f)
}

/// Multilabel precision, recall and F1; `logits` and `targets` hold one
/// row per example.
pub fn aed_metrics(logits: &[Vec<f64>], targets: &[Vec<f64>], threshold: f64) -> Result<AedMetrics> {
    let k = targets.first().map_or(0, Vec::len);
    if logits.len() != targets.len() || logits.iter().chain(targets).any(|r| r.len() != k) || k == 0 {
        return Err(invalid!("AED logits and targets must be equal, non-empty rectangles"));
    }
    let mut counts = vec![(0usize, 0usize, 0usize); k];
    for (z, y) in logits.iter().zip(targets) {
        for j in 0..k {
            let pred = sigmoid(z[j]) > threshold;
            let truth = y[j] > 0.5;
            let c = &mut counts[j];
            match (pred, truth) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    let per_label: Vec<LabelMetrics> = counts
        .iter()
        .map(|&(tp, fp, fn_)| {
            let (precision, recall, f1) = prf(tp, fp, fn_);
            LabelMetrics { precision, recall, f1, support: tp + fn_ }
        })
        .collect();
    let (tp, fp, fn_) = counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let macro_f1 = per_label.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(AedMetrics { per_label, micro_f1: prf(tp, fp, fn_).2, macro_f1 })
}

fn example_f1(z: &[f64], y: &[f64]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&zi, &yi) in z.iter().zip(y) {
        match (sigmoid(zi) > AED_THRESHOLD, yi > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    prf(tp, fp, fn_).2
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketSummary {
    pub snr_db: f64,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub aggregate: Aggregate,
    pub buckets: Vec<BucketSummary>,
    pub aed: Option<AedMetrics>,
    /// Entries that could not be evaluated, with the reason.
    pub errors: Vec<(String, String)>,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>, aed: Option<AedMetrics>, errors: Vec<(String, String)>) -> Self {
        let all: Vec<&EvalRecord> = records.iter().collect();
        let aggregate = Aggregate::of(&all);
        let buckets = SNR_BUCKETS
            .iter()
            .map(|&b| {
                let sel: Vec<&EvalRecord> =
                    records.iter().filter(|r| r.snr_in_db.is_some_and(|s| snr_bucket(s) == b)).collect();
                BucketSummary { snr_db: b, aggregate: Aggregate::of(&sel) }
            })
            .collect();
        Self { records, aggregate, buckets, aed, errors }
    }
}

/// Builds a record from the three signals.
pub fn score(stft: &Stft, id: &str, snr_in_db: Option<f64>, clean: &Waveform, noisy: &Waveform, enhanced: &Waveform) -> Result<EvalRecord> {
    let si_sdr_in = si_sdr(clean.samples(), noisy.samples(), SI_SDR_EPS)?;
    let si_sdr_out = si_sdr(clean.samples(), enhanced.samples(), SI_SDR_EPS)?;
    Ok(EvalRecord {
        id: id.to_string(),
        snr_in_db,
        si_sdr_in,
        si_sdr_out,
        si_sdr_improvement: si_sdr_out - si_sdr_in,
        lsd: log_spectral_distance(stft, clean, enhanced)?,
        aed_f1: None,
    })
}

/// Scores every example with the model in eval mode, one example per
/// forward pass so batch composition cannot affect results.
pub fn evaluate_examples<S: Scalar>(
    model: &mut ModelParams<S>,
    stft: &Stft,
    examples: &[TrainExample],
    snrs: &[Option<f64>],
) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(examples.len());
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let enhanced = enhance_batch(model, stft, &[ex], Mode::Eval)?.remove(0);
        let mut rec = score(stft, &ex.id, snrs.get(i).copied().flatten(), &ex.clean, &ex.noisy, &enhanced)?;
        if model.aed.is_some() {
            if let (Some(y), Some(vis)) = (&ex.labels, &ex.visual) {
                let z = aed_logits(model, vis)?;
                rec.aed_f1 = Some(example_f1(&z, y));
                logits.push(z);
                targets.push(y.clone());
            }
        }
        records.push(rec);
    }
    let aed = if logits.is_empty() { None } else { Some(aed_metrics(&logits, &targets, AED_THRESHOLD)?) };
    Ok(EvalReport::from_records(records, aed, Vec::new()))
}

/// AED logits for one clip.
pub fn aed_logits<S: Scalar>(model: &mut ModelParams<S>, vis: &crate::visual::VisualFeatureSequence) -> Result<Vec<f64>> {
    let (enc, head) = match (&mut model.visual, &model.aed) {
        (Some(e), Some(h)) => (e, h),
        _ => return Err(crate::Error::MissingHead),
    };
    let (x, frames) = enc.batch_input(&[vis])?;
    let states = enc.forward(&x, 1, frames)?;
    Ok(head.logits(&states.pooled, 1).into_iter().map(|v| v.f64()).collect())
}

/// Grid cells for a spec such as `loc=A,B;method=concat;align=upsample`.
/// Missing keys default to all values.
pub fn parse_grid(spec: &str) -> Result<Vec<FusionConfig>> {
    let mut locs = Tap::ALL.to_vec();
    let mut methods = vec![FusionMethod::Add, FusionMethod::Concat];
    let mut aligns = vec![Alignment::Upsample, Alignment::Attention];
    let mut seen = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, vals) = part.split_once('=').ok_or_else(|| invalid!("grid term '{part}' is not key=values"))?;
        let canonical = if key.trim() == "location" { "loc" } else { key.trim() };
        if seen.contains(&canonical) {
            return Err(invalid!("grid key '{canonical}' given twice"));
        }
        seen.push(canonical);
        let vals: Vec<&str> = vals.split(',').map(str::trim).collect();
        if vals.iter().any(|v| v.is_empty()) {
            return Err(invalid!("empty value in grid term '{part}'"));
        }
        match key.trim() {
            "loc" | "location" => locs = vals.iter().map(|v| parse_tap(v)).collect::<Result<_>>()?,
            "method" => methods = vals.iter().map(|v| parse_method(v)).collect::<Result<_>>()?,
            "align" => aligns = vals.iter().map(|v| parse_align(v)).collect::<Result<_>>()?,
            other => return Err(invalid!("unknown grid key '{other}'")),
        }
    }
    let mut cells = Vec::new();
    for &l in &locs {
        for &m in &methods {
            for &a in &aligns {
                let c = FusionConfig::new(l, a, m);
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
        }
    }
    Ok(cells)
}

pub fn parse_tap(s: &str) -> Result<Tap> {
    match s.to_ascii_uppercase().as_str() {
        "A" | "INPUT" => Ok(Tap::A),
        "B" | "INTERMEDIATE" => Ok(Tap::B),
        "C" | "LATE" => Ok(Tap::C),
        "D" | "MASK" => Ok(Tap::D),
        _ => Err(invalid!("unknown fusion location '{s}'")),
    }
}

pub fn parse_method(s: &str) -> Result<FusionMethod> {
    match s.to_ascii_lowercase().as_str() {
        "add" => Ok(FusionMethod::Add),
        "concat" => Ok(FusionMethod::Concat),
        _ => Err(invalid!("unknown fusion method '{s}'")),
    }
}

pub fn parse_align(s: &str) -> Result<Alignment> {
    match s.to_ascii_lowercase().as_str() {
        "upsample" => Ok(Alignment::Upsample),
        "attention" => Ok(Alignment::Attention),
        _ => Err(invalid!("unknown alignment '{s}'")),
    }
}

pub fn tap_name(t: Tap) -> &'static str {
    match t {
        Tap::A => "A",
        Tap::B => "B",
        Tap::C => "C",
        Tap::D => "D",
    }
}

pub fn method_name(m: FusionMethod) -> &'static str {
    match m {
        FusionMethod::Add => "add",
        FusionMethod::Concat => "concat",
    }
}

pub fn align_name(a: Alignment) -> &'static str {
    match a {
        Alignment::Upsample => "upsample",
        Alignment::Attention => "attention",
    }
}

pub fn cell_label(c: &FusionConfig) -> String {
    format!("{}/{}/{}", tap_name(c.location), method_name(c.method), align_name(c.align))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub fusion: FusionConfig,
    /// Mean SI-SDR improvement over the noisy input after training.
    pub mean_si_sdr_improvement: f64,
    /// The same before the first update.
    pub step0_si_sdr_improvement: f64,
    pub steps_trained: u64,
    pub seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// Mean improvement of the audio-only model the cells start from.
    pub audio_only_improvement: f64,
    pub cells: Vec<AblationCell>,
}

fn mean_improvement<S: Scalar>(model: &mut ModelParams<S>, stft: &Stft, examples: &[TrainExample]) -> Result<f64> {
    Ok(evaluate_examples(model, stft, examples, &[])?.aggregate.si_sdr_improvement.mean)
}

/// Trains one audio-visual model per cell from the same audio-only
/// parameters, seed and data order. A failing cell is recorded and the
/// grid continues.
pub fn ablation_grid<S: Scalar>(
    base: &TrainConfig,
    model_cfg: &ModelConfig,
    audio: &TensorTable,
    examples: &[TrainExample],
    cells: &[FusionConfig],
) -> Result<AblationReport> {
    let stft = Stft::new(base.stft)?;
    let mut audio_model = ModelParams::<S>::new(ModelConfig::audio_only(model_cfg.crn.clone()))?;
    audio_model.import(audio, &crate::model::Subset::ALL)?;
    let audio_only_improvement = mean_improvement(&mut audio_model, &stft, examples)?;
    let mut out = Vec::with_capacity(cells.len());
    for &fusion in cells {
        let run = || -> Result<(f64, f64, u64)> {
            let cfg = ModelConfig { fusion: Some(fusion), aed: base.stage == Stage::AudioVisualMtl, ..model_cfg.clone() };
            let mut model = init_av_from_audio::<S>(audio, cfg, base.seed)?;
            let step0 = mean_improvement(&mut model, &stft, examples)?;
            let tc = TrainConfig { fusion, ..base.clone() };
            let mut trainer = Trainer::new(tc, model)?;
            trainer.run(examples, &mut |_, _| Ok(()))?;
            let steps = trainer.step();
            Ok((step0, mean_improvement(&mut trainer.model, &stft, examples)?, steps))
        };
        out.push(match run() {
            Ok((step0, fin, steps)) => AblationCell {
                fusion,
                mean_si_sdr_improvement: fin,
                step0_si_sdr_improvement: step0,
                steps_trained: steps,
                seed: base.seed,
                error: None,
            },
            Err(e) => AblationCell {
                fusion,
                mean_si_sdr_improvement: f64::NAN,
                step0_si_sdr_improvement: f64::NAN,
                steps_trained: 0,
                seed: base.seed,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(AblationReport { audio_only_improvement, cells: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::signal::StftConfig;
    use rand::Rng;

    fn wave(len: usize, seed: u64) -> Waveform {
        let mut r = stream(seed, "eval-test");
        Waveform::new((0..len).map(|_| r.random_range(-0.5..0.5)).collect()).unwrap()
    }

    #[test]
    fn lsd_cases() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let a = wave(4000, 1);
        let b = wave(4000, 2);
        assert_eq!(log_spectral_distance(&stft, &a, &a).unwrap(), 0.0);
        let scaled = Waveform::new(a.samples().iter().map(|v| v * 10.0).collect()).unwrap();
        assert!((log_spectral_distance(&stft, &scaled, &a).unwrap() - 20.0).abs() < 1e-4);
        let ab = log_spectral_distance(&stft, &a, &b).unwrap();
        assert!((ab - log_spectral_distance(&stft, &b, &a).unwrap()).abs() < 1e-12);
        assert!(log_spectral_distance(&stft, &a, &wave(10, 3)).is_err());
    }

    #[test]
    fn identity_and_oracle_enhancers() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let clean = wave(3200, 4);
        let noisy = Waveform::new(clean.samples().iter().zip(wave(3200, 5).samples()).map(|(a, b)| a + b).collect()).unwrap();
        let id = score(&stft, "x", Some(0.0), &clean, &noisy, &noisy).unwrap();
        assert!(id.si_sdr_improvement.abs() < 1e-6);
        let oracle = score(&stft, "x", Some(0.0), &clean, &noisy, &clean).unwrap();
        let e: f64 = clean.samples().iter().map(|v| v * v).sum();
        assert!((oracle.si_sdr_out - 10.0 * libm::log10(e / SI_SDR_EPS)).abs() < 1e-3);
    }

    #[test]
    fn aed_metric_cases() {
        let y = vec![vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]];
        let perfect: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|&t| if t > 0.5 { 20.0 } else { -20.0 }).collect()).collect();
        let m = aed_metrics(&perfect, &y, AED_THRESHOLD).unwrap();
        assert!(m.per_label.iter().all(|l| l.f1 == 1.0));
        assert_eq!(m.micro_f1, 1.0);
        let zeros = vec![vec![0.0; 3]; 2];
        let m = aed_metrics(&zeros, &y, AED_THRESHOLD).unwrap();
        assert_eq!(m.per_label[0].recall, 0.0);
        assert_eq!(m.per_label[2].recall, 0.0);
        assert!(aed_metrics(&zeros, &y[..1], AED_THRESHOLD).is_err());
    }

    #[test]
    fn aed_metrics_match_brute_force() {
        let mut r = stream(6, "aed");
        let logits: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
        let targets: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect()).collect();
        let m = aed_metrics(&logits, &targets, AED_THRESHOLD).unwrap();
        for j in 0..4 {
            let pairs: Vec<(bool, bool)> = logits.iter().zip(&targets).map(|(z, y)| (1.0 / (1.0 + (-z[j]).exp()) > 0.5, y[j] == 1.0)).collect();
            let tp = pairs.iter().filter(|p| p.0 && p.1).count() as f64;
            let pp = pairs.iter().filter(|p| p.0).count() as f64;
            let ap = pairs.iter().filter(|p| p.1).count() as f64;
            assert!((m.per_label[j].precision - tp / pp).abs() < 1e-15);
            assert!((m.per_label[j].recall - tp / ap).abs() < 1e-15);
            let f = 2.0 * (tp / pp) * (tp / ap) / (tp / pp + tp / ap);
            assert!((m.per_label[j].f1 - f).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("loc=C,D;method=add,concat;align=upsample").unwrap().len(), 4);
        assert_eq!(parse_grid("loc=A,B,C,D;method=concat;align=upsample").unwrap().len(), 4);
        assert_eq!(parse_grid("").unwrap().len(), 16);
        for bad in ["loc=E", "loc", "method=mul", "speed=2", "loc=A,"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn buckets_and_aggregates() {
        assert_eq!(snr_bucket(-13.0), -10.0);
        assert_eq!(snr_bucket(26.0), 20.0);
        let rec = |id: &str, snr: f64, imp: f64| EvalRecord {
            id: id.into(),
            snr_in_db: Some(snr),
            si_sdr_in: snr,
            si_sdr_out: snr + imp,
            si_sdr_improvement: imp,
            lsd: 1.0,
            aed_f1: None,
        };
        let recs = vec![rec("a", 1.0, 2.0), rec("b", -9.0, 4.0), rec("c", 0.5, 6.0)];
        let rep = EvalReport::from_records(recs.clone(), None, Vec::new());
        assert_eq!(rep.aggregate.si_sdr_improvement.mean, 4.0);
        let zero = rep.buckets.iter().find(|b| b.snr_db == 0.0).unwrap();
        assert_eq!(zero.aggregate.count, 2);
        let mut rev = recs;
        rev.reverse();
        let rep2 = EvalReport::from_records(rev, None, Vec::new());
        assert!((rep2.aggregate.si_sdr_improvement.mean - 4.0).abs() < 1e-12);
    }
}
