//! JSON, CSV and SVG renderings of logs and reports.

use std::fmt::Write as _;
use std::path::Path;

use avns_core::eval::{cell_label, AblationReport, Aggregate, EvalReport, Stat};
use avns_core::train::StepLog;
use serde_json::{json, Value};

use crate::error::{AppError, Result};

pub const LOG_HEADER: &str = "step,loss,l1,wstft,sisdr,aed";
pub const METRICS_NOTE: &str =
    "Objective metrics only: SI-SDR improvement over the noisy input and log-spectral distance. Perceptual metrics are not computed.";

pub fn log_line(l: &StepLog) -> String {
    format!("{},{},{},{},{},{}", l.step, l.loss, l.l1, l.wstft, l.sisdr, l.aed)
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn stat(s: &Stat) -> Value {
    json!({ "mean": num(s.mean), "std": num(s.std) })
}

fn aggregate(a: &Aggregate) -> Value {
    json!({
        "count": a.count,
        "si_sdr_in": stat(&a.si_sdr_in),
        "si_sdr_out": stat(&a.si_sdr_out),
        "si_sdr_improvement": stat(&a.si_sdr_improvement),
        "lsd": stat(&a.lsd),
    })
}

/// `vs_audio` is the audio-only checkpoint's report on the same manifest,
/// when one was given.
pub fn eval_json(r: &EvalReport, vs_audio: Option<&EvalReport>) -> Value {
    let records: Vec<Value> = r
        .records
        .iter()
        .map(|x| {
            json!({
                "id": x.id,
                "snr_in_db": x.snr_in_db.map_or(Value::Null, num),
                "si_sdr_in": num(x.si_sdr_in),
                "si_sdr_out": num(x.si_sdr_out),
                "si_sdr_improvement": num(x.si_sdr_improvement),
                "lsd": num(x.lsd),
                "aed_f1": x.aed_f1.map_or(Value::Null, num),
            })
        })
        .collect();
    let buckets: Vec<Value> =
        r.buckets.iter().map(|b| json!({ "snr_db": num(b.snr_db), "aggregate": aggregate(&b.aggregate) })).collect();
    let aed = r.aed.as_ref().map_or(Value::Null, |m| {
        json!({
            "threshold": "probability > 0.5",
            "micro_f1": num(m.micro_f1),
            "macro_f1": num(m.macro_f1),
            "per_label": m.per_label.iter().map(|l| json!({
                "precision": num(l.precision), "recall": num(l.recall), "f1": num(l.f1), "support": l.support
            })).collect::<Vec<_>>(),
        })
    });
    let mut agg = aggregate(&r.aggregate);
    if let Some(a) = vs_audio {
        agg["improvement_vs_audio_only_db"] =
            num(r.aggregate.si_sdr_out.mean - a.aggregate.si_sdr_out.mean);
    }
    json!({
        "note": METRICS_NOTE,
        "records": records,
        "aggregate": agg,
        "buckets": buckets,
        "aed": aed,
        "errors": r.errors.iter().map(|(id, e)| json!({ "id": id, "error": e })).collect::<Vec<_>>(),
    })
}

pub fn eval_csv(r: &EvalReport) -> String {
    let mut s = String::from("id,snr_in_db,si_sdr_in,si_sdr_out,si_sdr_improvement,lsd,aed_f1\n");
    for x in &r.records {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            x.id,
            opt(x.snr_in_db),
            x.si_sdr_in,
            x.si_sdr_out,
            x.si_sdr_improvement,
            x.lsd,
            opt(x.aed_f1)
        );
    }
    s
}

pub fn ablation_json(r: &AblationReport) -> Value {
    json!({
        "note": METRICS_NOTE,
        "audio_only_improvement_db": num(r.audio_only_improvement),
        "cells": r.cells.iter().map(|c| json!({
            "cell": cell_label(&c.fusion),
            "mean_si_sdr_improvement_db": num(c.mean_si_sdr_improvement),
            "step0_si_sdr_improvement_db": num(c.step0_si_sdr_improvement),
            "vs_audio_only_db": num(c.mean_si_sdr_improvement - r.audio_only_improvement),
            "steps_trained": c.steps_trained,
            "seed": c.seed,
            "error": c.error,
        })).collect::<Vec<_>>(),
    })
}

pub fn ablation_csv(r: &AblationReport) -> String {
    let mut s = String::from("cell,mean_si_sdr_improvement_db,step0_si_sdr_improvement_db,vs_audio_only_db,steps_trained,seed,error\n");
    for c in &r.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            cell_label(&c.fusion),
            c.mean_si_sdr_improvement,
            c.step0_si_sdr_improvement,
            c.mean_si_sdr_improvement - r.audio_only_improvement,
            c.steps_trained,
            c.seed,
            c.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of mean SI-SDR improvement per cell, with the audio-only
/// level as a dashed line.
pub fn ablation_svg(r: &AblationReport) -> String {
    let (w, h, left, bottom, top) = (120 + 90 * r.cells.len().max(1), 360.0, 60.0, 80.0, 30.0);
    let vals: Vec<f64> = r.cells.iter().map(|c| c.mean_si_sdr_improvement).collect();
    let finite = vals.iter().copied().chain([r.audio_only_improvement, 0.0]).filter(|v| v.is_finite());
    let hi = finite.clone().fold(1.0f64, f64::max);
    let lo = finite.fold(0.0f64, f64::min);
    let plot_h = h - bottom - top;
    let y = |v: f64| top + (hi - v) / (hi - lo) * plot_h;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">Mean SI-SDR improvement (dB) per fusion cell</text>"#, w / 2);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, y(0.0), w - 20, y(0.0));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom);
    for tick in [lo, 0.0, hi] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{tick:.1}</text>"#, left - 4.0, y(tick) + 4.0);
    }
    for (i, c) in r.cells.iter().enumerate() {
        let x = left + 20.0 + 90.0 * i as f64;
        let label = escape(&cell_label(&c.fusion));
        let v = c.mean_si_sdr_improvement;
        if v.is_finite() {
            let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(s, r##"<rect x="{x}" y="{y0:.1}" width="60" height="{:.1}" fill="#4a7ab5"/>"##, (y1 - y0).max(0.5));
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, x + 30.0, y0 - 4.0);
        } else {
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="middle">failed</text>"#, x + 30.0, y(0.0) - 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, x + 30.0, h - bottom + 16.0);
    }
    if r.audio_only_improvement.is_finite() {
        let ya = y(r.audio_only_improvement);
        let _ = writeln!(s, r#"<line x1="{left}" y1="{ya:.1}" x2="{}" y2="{ya:.1}" stroke="gray" stroke-dasharray="4 3"/>"#, w - 20);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" fill="gray">audio only</text>"#, w - 22, ya - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn write_json(path: impl AsRef<Path>, v: &Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(v).expect("json renders") + "\n"))
}
