//! The work behind each subcommand, callable without going through argv.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use avns_core::data::{mix_pair, SynthConfig};
use avns_core::eval::{ablation_grid, evaluate_examples, parse_grid, AblationReport, EvalReport};
use avns_core::model::{init_av_from_audio, ModelParams};
use avns_core::signal::Stft;
use avns_core::train::{batch_indices, enhance_batch, Stage, StepLog, TrainExample, Trainer};
use avns_core::nn::Mode;

use crate::checkpoint::{stage_name, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_all, load_entry, write_synthetic_corpus, LoadedExample};
use crate::error::{usage, AppError, Result};
use crate::features::read_feature_file;
use crate::manifest::read_manifest;
use crate::report;
use crate::wav::{read_wav, write_wav};

pub fn gen(out: &Path, n: usize, seed: u64, cfg: &SynthConfig) -> Result<PathBuf> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    write_synthetic_corpus(out, n, cfg, seed)
}

/// Writes `<id>.noisy.wav` and `<id>.clean.wav` per entry plus `snr.csv`.
pub fn mix(manifest: &Path, out: &Path, seed: u64) -> Result<usize> {
    let m = read_manifest(manifest)?;
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let mut table = String::from("id,snr_db\n");
    for (i, e) in m.entries.iter().enumerate() {
        let clean = read_wav(m.resolve(&e.clean_path))?;
        let noise = read_wav(m.resolve(&e.noise_path))?;
        let r = mix_pair(&clean, &noise, e.snr_db, &mut e.mix_rng(seed, i))?;
        write_wav(out.join(format!("{}.noisy.wav", e.id)), &r.noisy)?;
        write_wav(out.join(format!("{}.clean.wav", e.id)), &r.clean)?;
        table.push_str(&format!("{},{}\n", e.id, r.achieved_snr_db));
    }
    report::write_text(out.join("snr.csv"), &table)?;
    Ok(m.entries.len())
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub manifest: PathBuf,
    pub stage: Option<Stage>,
    pub init: Option<PathBuf>,
    pub no_audio_init: bool,
    pub resume: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
    pub last: Option<StepLog>,
    /// Loss on the step-0 batch before and after this run.
    pub initial_eval: StepLog,
    pub final_eval: StepLog,
}

pub fn run_config(config: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(sets)?;
    if let Some(s) = seed {
        cfg.set(&format!("seed={s}"))?;
    }
    Ok(cfg)
}

fn examples_for(loaded: Vec<LoadedExample>, stage: Stage) -> Vec<TrainExample> {
    loaded
        .into_iter()
        .map(|l| {
            let mut ex = l.example;
            if stage == Stage::AudioOnly {
                ex.visual = None;
                ex.labels = None;
            }
            ex
        })
        .collect()
}

fn feature_dim(examples: &[TrainExample]) -> Result<usize> {
    examples
        .first()
        .and_then(|e| e.visual.as_ref())
        .map(|v| v.dim())
        .ok_or_else(|| usage("the manifest has no entries to take the visual feature size from"))
}

fn audio_init(path: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.stage() != Some(Stage::AudioOnly) {
        return Err(usage(format!("{}: --init needs an audio-only checkpoint, found stage '{}'", path.display(), ck.meta.stage)));
    }
    Ok(ck)
}

/// Builds the starting model for a fresh run of `stage`.
fn fresh_model(args: &TrainArgs, cfg: &RunConfig, stage: Stage, examples: &[TrainExample]) -> Result<ModelParams<f32>> {
    let seed: u64 = cfg.train_config(stage)?.seed;
    match (stage, &args.init, args.no_audio_init) {
        (Stage::AudioOnly, Some(_), _) => Err(usage("--init is only for the av and av-mtl stages")),
        (Stage::AudioOnly, None, _) => Ok(ModelParams::initialized(cfg.model_config(stage, 0)?, seed)?),
        (_, Some(_), true) => Err(usage("--init and --no-audio-init are mutually exclusive")),
        (_, None, false) => Err(usage(format!(
            "stage {} starts from an audio-only checkpoint: pass --init CKPT or --no-audio-init",
            stage_name(stage)
        ))),
        (_, None, true) => Ok(ModelParams::initialized(cfg.model_config(stage, feature_dim(examples)?)?, seed)?),
        (_, Some(path), false) => {
            let ck = audio_init(path)?;
            let mut model_cfg = cfg.model_config(stage, feature_dim(examples)?)?;
            let ck_crn = ck.model_config()?.crn;
            if model_cfg.crn != ck_crn {
                return Err(usage(format!("{}: CRN settings differ from the run config", path.display())));
            }
            model_cfg.crn = ck_crn;
            Ok(init_av_from_audio(&ck.tensors, model_cfg, seed)?)
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary> {
    let cfg = run_config(args.config.as_deref(), &args.sets, args.seed)?;
    let resumed = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let stage = match (args.stage, &resumed) {
        (Some(s), Some(ck)) if ck.stage() != Some(s) => {
            return Err(usage(format!("--stage {} does not match the resumed checkpoint's stage '{}'", stage_name(s), ck.meta.stage)))
        }
        (Some(s), _) => s,
        (None, Some(ck)) => ck.stage().ok_or_else(|| usage(format!("unknown stage '{}' in checkpoint", ck.meta.stage)))?,
        (None, None) => return Err(usage("--stage is required")),
    };
    let tc = cfg.train_config(stage)?;
    let stft = Stft::new(tc.stft)?;
    let manifest = read_manifest(&args.manifest)?;
    let num_labels: usize = cfg.get("visual.labels").parse().map_err(|_| usage("visual.labels"))?;
    let labels = (stage == Stage::AudioVisualMtl).then_some(num_labels);
    let examples = examples_for(load_all(&manifest, &stft, tc.seed, labels)?, stage);

    let mut trainer = match &resumed {
        Some(ck) => {
            if args.init.is_some() || args.no_audio_init {
                return Err(usage("--resume cannot be combined with --init or --no-audio-init"));
            }
            let model = ck.model::<f32>()?;
            let opt = ck.optimizer::<f32>(tc.optimizer)?;
            Trainer::resume(tc.clone(), model, opt, ck.train_state())?
        }
        None => Trainer::new(tc.clone(), fresh_model(args, &cfg, stage, &examples)?)?,
    };

    let ckpt_path = PathBuf::from(cfg.checkpoint_path());
    let log_path = PathBuf::from(cfg.log_path());
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let mut log_file = if resumed.is_some() {
        OpenOptions::new().append(true).create(true).open(&log_path)
    } else {
        std::fs::File::create(&log_path)
    }
    .map_err(|e| AppError::io(&log_path, e))?;
    if resumed.is_none() {
        writeln!(log_file, "{}", report::LOG_HEADER).map_err(|e| AppError::io(&log_path, e))?;
    }

    if examples.is_empty() {
        return Err(usage(format!("{}: manifest has no entries", args.manifest.display())));
    }
    // the first batch of a fresh run, scored before and after training
    let probe: Vec<TrainExample> =
        batch_indices(examples.len(), tc.batch_size, tc.seed, 0).into_iter().map(|i| examples[i].clone()).collect();
    let initial_eval = trainer.evaluate_loss(&probe)?;
    let mut failure: Option<AppError> = None;
    let mut last = None;
    let seed = tc.seed;
    let hop = tc.stft.hop;
    let result = trainer.run(&examples, &mut |log, t| {
        let mut write = || -> Result<()> {
            writeln!(log_file, "{}", report::log_line(log)).map_err(|e| AppError::io(&log_path, e))?;
            let state = t.state();
            Checkpoint::capture(stage, &mut t.model, Some(&t.optimizer), state, seed, hop).save(&ckpt_path)
        };
        last = Some(*log);
        write().map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            avns_core::Error::InvalidInput(msg)
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    if trainer.step() == 0 || last.is_none() {
        let state = trainer.state();
        Checkpoint::capture(stage, &mut trainer.model, Some(&trainer.optimizer), state, seed, hop).save(&ckpt_path)?;
    }
    let final_eval = trainer.evaluate_loss(&probe)?;
    Ok(TrainSummary { checkpoint: ckpt_path, log: log_path, steps: trainer.step(), last, initial_eval, final_eval })
}


pub fn enhance(ckpt: &Path, input: &Path, features: Option<&Path>, out: &Path) -> Result<usize> {
    let ck = Checkpoint::load(ckpt)?;
    let mut model = ck.model::<f32>()?;
    let visual = match (model.visual.is_some(), features) {
        (true, None) => return Err(usage(format!("{}: audio-visual checkpoint needs --features", ckpt.display()))),
        (false, Some(_)) => return Err(usage(format!("{}: audio-only checkpoint takes no --features", ckpt.display()))),
        (true, Some(p)) => {
            let seq = read_feature_file(p)?;
            let want = model.config().visual.as_ref().map_or(0, |v| v.input_dim);
            if seq.dim() != want {
                return Err(usage(format!("{}: feature size {} but the checkpoint expects {want}", p.display(), seq.dim())));
            }
            Some(seq)
        }
        (false, None) => None,
    };
    let noisy = read_wav(input)?;
    let stft = Stft::new(ck.stft_config())?;
    let ex = TrainExample::new(&stft, "input", noisy.clone(), noisy, visual, None)?;
    let enhanced = enhance_batch(&mut model, &stft, &[&ex], Mode::Eval)?.remove(0);
    write_wav(out, &enhanced)?;
    Ok(enhanced.len())
}

/// Loads every entry it can; unreadable entries are returned as errors.
fn load_for_eval(manifest: &Path, stft: &Stft, seed: u64, num_labels: Option<usize>, visual: bool) -> Result<(Vec<TrainExample>, Vec<Option<f64>>, Vec<(String, String)>)> {
    let m = read_manifest(manifest)?;
    let (mut examples, mut snrs, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..m.entries.len() {
        match load_entry(&m, i, stft, seed, num_labels) {
            Ok(l) => {
                let mut ex = l.example;
                if !visual {
                    ex.visual = None;
                    ex.labels = None;
                }
                examples.push(ex);
                snrs.push(Some(l.snr_db));
            }
            Err(e) => errors.push((m.entries[i].id.clone(), e.to_string())),
        }
    }
    Ok((examples, snrs, errors))
}

fn evaluate_model(ck: &Checkpoint, manifest: &Path, seed: u64) -> Result<EvalReport> {
    let mut model = ck.model::<f32>()?;
    let stft = Stft::new(ck.stft_config())?;
    let labels = model.aed.is_some().then(|| model.config().visual.as_ref().map_or(0, |v| v.num_labels));
    let (examples, snrs, errors) = load_for_eval(manifest, &stft, seed, labels, model.visual.is_some())?;
    let r = evaluate_examples(&mut model, &stft, &examples, &snrs)?;
    Ok(EvalReport::from_records(r.records, r.aed, errors))
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub audio_only: Option<EvalReport>,
    pub json: serde_json::Value,
}

/// Mixing uses `seed`, or the checkpoint's training seed when absent.
pub fn evaluate(ckpt: &Path, manifest: &Path, seed: Option<u64>, audio_ckpt: Option<&Path>) -> Result<EvalOutcome> {
    let ck = Checkpoint::load(ckpt)?;
    let seed = seed.unwrap_or(ck.meta.seed);
    let report = evaluate_model(&ck, manifest, seed)?;
    let audio_only = match audio_ckpt {
        Some(p) => {
            let a = audio_init(p)?;
            Some(evaluate_model(&a, manifest, seed)?)
        }
        None => None,
    };
    let json = report::eval_json(&report, audio_only.as_ref());
    Ok(EvalOutcome { report, audio_only, json })
}

pub fn write_eval(outcome: &EvalOutcome, path: &Path) -> Result<()> {
    report::write_json(path, &outcome.json)?;
    report::write_text(path.with_extension("csv"), &report::eval_csv(&outcome.report))
}

#[derive(Debug, Clone, Default)]
pub struct AblateArgs {
    pub config: Option<PathBuf>,
    pub manifest: PathBuf,
    pub init: PathBuf,
    pub grid: String,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
}

pub fn ablate(args: &AblateArgs) -> Result<AblationReport> {
    let cells = parse_grid(&args.grid).map_err(|e| usage(format!("--grid: {e}")))?;
    let mut cfg = run_config(args.config.as_deref(), &args.sets, args.seed)?;
    if let Some(s) = args.steps {
        cfg.set(&format!("max_steps={s}"))?;
    }
    let tc = cfg.train_config(Stage::AudioVisual)?;
    let ck = audio_init(&args.init)?;
    let stft = Stft::new(tc.stft)?;
    let manifest = read_manifest(&args.manifest)?;
    let examples = examples_for(load_all(&manifest, &stft, tc.seed, None)?, Stage::AudioVisual);
    let mut model_cfg = cfg.model_config(Stage::AudioVisual, feature_dim(&examples)?)?;
    model_cfg.crn = ck.model_config()?.crn;
    Ok(ablation_grid::<f32>(&tc, &model_cfg, &ck.tensors, &examples, &cells)?)
}

/// Writes the JSON report to `path` with CSV and SVG siblings.
pub fn write_ablation(r: &AblationReport, path: &Path) -> Result<()> {
    report::write_json(path, &report::ablation_json(r))?;
    report::write_text(path.with_extension("csv"), &report::ablation_csv(r))?;
    report::write_text(path.with_extension("svg"), &report::ablation_svg(r))
}
