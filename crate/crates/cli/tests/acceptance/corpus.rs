//! A small labelled corpus of seeded tones and noise, with structured feature
//! files standing in for a pretrained encoder.

use std::f32::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use zenfoley::core::frontend::{
    melspectrogram, resample, ExternalFeatures, MelParams, Waveform, MODEL_RATE, SOURCE_RATE,
};
use zenfoley::core::NUM_CATEGORIES;
use zenfoley::formats::write_features;
use zenfoley::wav::{read_wav, write_wav};

use crate::fd::rng;

/// Tone frequency, noise level and pulse rate per category.
const VOICES: [(f32, f32, f32); NUM_CATEGORIES] = [
    (420.0, 0.05, 2.0),
    (0.0, 0.5, 2.5),
    (0.0, 0.8, 0.25),
    (2500.0, 0.3, 8.0),
    (90.0, 0.1, 0.0),
    (0.0, 0.35, 0.0),
    (700.0, 0.4, 0.5),
];

/// Mel settings of the stand-in encoder: bands over 0 to 6 kHz only, at the
/// desk front end's frame rate.
pub fn feature_params() -> MelParams {
    MelParams {
        n_mels: 16,
        fft_size: 2048,
        hop: 1500,
        f_max: 6000.0,
        ..MelParams::default()
    }
}

fn clip(label: usize, seed: u64) -> Waveform {
    let (freq, noise, rate) = VOICES[label];
    let mut r = rng(seed);
    let freq = freq * r.gen_range(0.9..1.1);
    let gain = r.gen_range(0.2..0.5);
    let phase = r.gen_range(0.0..1.0);
    let n = (SOURCE_RATE * 4) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / SOURCE_RATE as f32;
            let env = if rate > 0.0 {
                let pos = (t * rate + phase).fract();
                (-pos * 12.0).exp()
            } else {
                0.6 + 0.4 * (TAU * 0.25 * t + phase).sin()
            };
            let tone = if freq > 0.0 { (TAU * freq * t).sin() } else { 0.0 };
            gain * env * (tone + noise * r.gen_range(-1.0..1.0))
        })
        .collect();
    Waveform::new(samples, SOURCE_RATE)
}

/// Writes `n` clips, labels round-robin, each with a `.cfe` sibling, and
/// returns the manifest path.
pub fn write(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut manifest = String::new();
    for i in 0..n {
        let label = i % NUM_CATEGORIES;
        let wav = dir.join(format!("clip_{i:03}.wav"));
        write_wav(&wav, &clip(label, seed.wrapping_mul(1000) + i as u64)).unwrap();
        let model = resample(&read_wav(&wav).unwrap(), MODEL_RATE).unwrap();
        let mel = melspectrogram(&model, &feature_params()).unwrap();
        write_features(&wav.with_extension("cfe"), &ExternalFeatures::new(mel.values).unwrap()).unwrap();
        writeln!(manifest, "clip_{i:03}.wav\t{label}").unwrap();
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Desk configuration over the corpus, plus `extra` lines.
pub fn config(dir: &Path, manifest: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "preset = desk\ndata.manifest = {}\nfeatures.source = file\n{extra}",
        manifest.display()
    );
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}
