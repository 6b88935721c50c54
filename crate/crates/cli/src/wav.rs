//! 16-bit mono PCM WAV files.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use zenfoley_core::frontend::Waveform;

use crate::error::{FormatError, PipelineError, Result};

const SCALE: f32 = 32768.0;

fn field(path: &Path, field: &'static str, detail: impl Into<String>) -> PipelineError {
    PipelineError::format(
        path,
        FormatError::Field {
            field,
            detail: detail.into(),
        },
    )
}

/// Reads a clip at its native rate, scales by 1/32768 and pads or crops it
/// to exactly four seconds.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => PipelineError::io(path, io),
        other => field(path, "header", other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(field(path, "channels", format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int {
        return Err(field(path, "sample_format", "floating-point PCM, expected integer"));
    }
    if spec.bits_per_sample != 16 {
        return Err(field(
            path,
            "bits_per_sample",
            format!("{} bits, expected 16", spec.bits_per_sample),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / SCALE))
        .collect::<Result<Vec<f32>, _>>()
        .map_err(|e| field(path, "data", e.to_string()))?;
    Ok(Waveform::new(samples, spec.sample_rate).fit_clip())
}

/// Writes 16-bit mono PCM at the waveform's rate; values are clamped to the
/// representable range.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => PipelineError::io(path, io),
        other => field(path, "write", other.to_string()),
    };
    let mut writer = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &w.samples {
        let v = (s * SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}
