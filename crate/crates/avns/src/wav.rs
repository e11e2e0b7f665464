//! Mono 16 kHz WAV reading (16-bit PCM or float32) and float32 writing.

use std::path::Path;

use avns_core::signal::Waveform;
use avns_core::SAMPLE_RATE;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{AppError, Result};

fn wav_err(path: &Path, e: hound::Error) -> AppError {
    match e {
        hound::Error::IoError(io) => AppError::io(path, io),
        other => AppError::format(path, other.to_string()),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE {
        return Err(AppError::format(
            path,
            format!("expected mono {SAMPLE_RATE} Hz, found {} channels at {} Hz", spec.channels, spec.sample_rate),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => {
            reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()
        }
        (fmt, bits) => return Err(AppError::format(path, format!("unsupported sample format {fmt:?}/{bits}"))),
    }
    .map_err(|e| wav_err(path, e))?;
    Ok(Waveform::new(samples)?)
}

/// Writes IEEE float32 samples.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 32, sample_format: SampleFormat::Float };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in wave.samples() {
        w.write_sample(s as f32).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}
