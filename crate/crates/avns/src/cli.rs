//! Argument parsing and dispatch for the `avns` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use avns_core::data::SynthConfig;
use avns_core::train::Stage;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::KEYS;
use crate::error::Result;
use crate::runner::{self, AblateArgs, TrainArgs};

/// Multi-task audio-visual noise suppression.
#[derive(Debug, Parser)]
#[command(name = "avns", version, disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    /// Audio-only pretraining
    Audio,
    /// Audio-visual fine-tuning
    Av,
    /// Audio-visual fine-tuning with the event-detection task
    AvMtl,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Audio => Stage::AudioOnly,
            StageArg::Av => Stage::AudioVisual,
            StageArg::AvMtl => Stage::AudioVisualMtl,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (clean speech, labelled noise, visual features) and its manifest
    Gen {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of examples
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Corpus seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of event labels
        #[arg(long, default_value_t = 5)]
        labels: usize,
        /// Clip length in seconds
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Visual feature size per frame
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        /// Visual frames per second
        #[arg(long, default_value_t = 2.0)]
        frame_rate: f64,
    },
    /// Mix every manifest entry and write noisy and clean WAVs with an SNR table
    Mix {
        /// Manifest (JSON lines)
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Mixing seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stage and write a checkpoint plus a CSV log
    Train {
        /// Run config (key = value lines); built-in defaults when absent
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training manifest
        #[arg(long)]
        manifest: PathBuf,
        /// Training stage; taken from the checkpoint when resuming
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        /// Audio-only checkpoint to start the av and av-mtl stages from
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start an av or av-mtl stage from random weights
        #[arg(long)]
        no_audio_init: bool,
        /// Continue from a checkpoint written by train
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override a config key; repeatable, the last one wins
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance one noisy WAV
    Enhance {
        /// Checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// Noisy 16 kHz mono WAV
        #[arg(long = "in")]
        input: PathBuf,
        /// Visual feature file; required by audio-visual checkpoints, rejected by audio-only ones
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output WAV
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a manifest (SI-SDR improvement, log-spectral distance, event F1)
    Evaluate {
        /// Checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// Evaluation manifest
        #[arg(long)]
        manifest: PathBuf,
        /// JSON report path; a CSV table is written next to it. Printed to stdout when absent
        #[arg(long)]
        report: Option<PathBuf>,
        /// Mixing seed; the checkpoint's training seed when absent
        #[arg(long)]
        seed: Option<u64>,
        /// Audio-only checkpoint to report the improvement against
        #[arg(long)]
        audio_ckpt: Option<PathBuf>,
    },
    /// Train one audio-visual model per fusion cell from the same audio-only checkpoint
    Ablate {
        /// Run config; built-in defaults when absent
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training manifest
        #[arg(long)]
        manifest: PathBuf,
        /// Audio-only checkpoint every cell starts from
        #[arg(long)]
        init: PathBuf,
        /// Grid of cells, keys loc, method and align; a missing key spans all its values
        #[arg(long, default_value = "loc=A,B,C,D;method=concat;align=upsample")]
        grid: String,
        /// JSON report path; CSV and SVG are written next to it
        #[arg(long, default_value = "ablation.json")]
        report: PathBuf,
        /// Steps per cell; overrides max_steps
        #[arg(long)]
        steps: Option<u64>,
        /// Override a config key; repeatable, the last one wins
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Table of config keys and defaults appended to the train and ablate help.
pub fn config_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (default in brackets):\n");
    for (k, d, doc) in KEYS {
        s.push_str(&format!("  {k:width$}  {doc} [{d}]\n"));
    }
    s
}

pub fn command() -> clap::Command {
    Cli::command()
        .mut_subcommand("train", |c| c.after_help(config_help()))
        .mut_subcommand("ablate", |c| c.after_help(config_help()))
}

pub fn parse<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&m)
}

/// Runs a parsed command, writing user-facing output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cli.command {
        Command::Gen { out: dir, n, seed, labels, duration, feature_dim, frame_rate } => {
            let cfg = SynthConfig {
                duration_secs: duration,
                num_labels: labels,
                feature_dim,
                frame_rate,
                ..SynthConfig::default()
            };
            let path = runner::gen(&dir, n, seed, &cfg)?;
            say(out, path.display().to_string());
        }
        Command::Mix { manifest, out: dir, seed } => {
            let n = runner::mix(&manifest, &dir, seed)?;
            say(out, format!("mixed {n} entries into {}", dir.display()));
        }
        Command::Train { config, manifest, stage, init, no_audio_init, resume, sets, seed } => {
            let args = TrainArgs { config, manifest, stage: stage.map(Stage::from), init, no_audio_init, resume, sets, seed };
            let s = runner::train(&args)?;
            say(out, format!("steps {}  final loss {:.6}  initial loss {:.6}", s.steps, s.final_eval.loss, s.initial_eval.loss));
            say(out, format!("checkpoint {}", s.checkpoint.display()));
            say(out, format!("log {}", s.log.display()));
        }
        Command::Enhance { ckpt, input, features, out: path } => {
            let n = runner::enhance(&ckpt, &input, features.as_deref(), &path)?;
            say(out, format!("wrote {n} samples to {}", path.display()));
        }
        Command::Evaluate { ckpt, manifest, report, seed, audio_ckpt } => {
            let o = runner::evaluate(&ckpt, &manifest, seed, audio_ckpt.as_deref())?;
            match report {
                Some(p) => {
                    runner::write_eval(&o, &p)?;
                    let a = &o.report.aggregate;
                    say(out, format!(
                        "{} records, {} errors, mean SI-SDR improvement {:.3} dB, LSD {:.3} dB",
                        a.count,
                        o.report.errors.len(),
                        a.si_sdr_improvement.mean,
                        a.lsd.mean
                    ));
                    say(out, format!("report {}", p.display()));
                }
                None => say(out, serde_json::to_string_pretty(&o.json).expect("json renders")),
            }
        }
        Command::Ablate { config, manifest, init, grid, report, steps, sets, seed } => {
            let args = AblateArgs { config, manifest, init, grid, sets, seed, steps };
            let r = runner::ablate(&args)?;
            runner::write_ablation(&r, &report)?;
            say(out, format!("audio only: {:.3} dB", r.audio_only_improvement));
            for c in &r.cells {
                match &c.error {
                    None => say(out, format!("{}: {:.3} dB", avns_core::eval::cell_label(&c.fusion), c.mean_si_sdr_improvement)),
                    Some(e) => say(out, format!("{}: failed: {e}", avns_core::eval::cell_label(&c.fusion))),
                }
            }
            say(out, format!("report {}", report.display()));
        }
    }
    Ok(())
}

/// Parses argv, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
