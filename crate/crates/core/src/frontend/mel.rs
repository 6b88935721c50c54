//! Log-mel spectrograms.

use alloc::vec;
use alloc::vec::Vec;

use super::audio::{Waveform, MODEL_RATE};
use super::fft::Stft;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// STFT and filterbank settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelParams {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Amplitude floor applied before the natural log.
    pub floor: f32,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            sample_rate: MODEL_RATE,
            fft_size: 1024,
            hop: 320,
            n_mels: 129,
            f_min: 0.0,
            f_max: MODEL_RATE as f64 / 2.0,
            floor: 1e-5,
        }
    }
}

impl MelParams {
    pub fn validate(&self) -> Result<()> {
        if self.hop > self.fft_size {
            return Err(Error::config(alloc::format!(
                "hop {} exceeds fft size {}",
                self.hop,
                self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::config(alloc::format!(
                "fft size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.n_mels == 0 || self.sample_rate == 0 {
            return Err(Error::config("mel extents must be positive"));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(Error::config("mel frequency range must lie within [0, nyquist]"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::config("amplitude floor must be positive"));
        }
        Ok(())
    }

    pub fn log_floor(&self) -> f32 {
        libm::log(self.floor as f64) as f32
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, peak weight 1.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Row-major `n_mels × n_bins`.
    pub weights: Vec<f64>,
    /// Centre frequency of each filter in Hz.
    pub centres: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(p: &MelParams) -> Self {
        let n_bins = p.fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(p.f_min), hz_to_mel(p.f_max));
        let edges: Vec<f64> = (0..p.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (p.n_mels + 1) as f64))
            .collect();
        let bin_hz = p.sample_rate as f64 / p.fft_size as f64;
        let mut weights = vec![0f64; p.n_mels * n_bins];
        for m in 0..p.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f >= l && f <= c && c > l {
                    (f - l) / (c - l)
                } else if f > c && f <= r && r > c {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w.max(0.0);
            }
        }
        MelFilterbank {
            n_mels: p.n_mels,
            n_bins,
            weights,
            centres: edges[1..=p.n_mels].to_vec(),
        }
    }

    pub fn apply(&self, magnitude: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.n_bins)
            .map(|row| row.iter().zip(magnitude).map(|(w, m)| w * m).sum())
            .collect()
    }
}

/// A `(n_mels, frames)` matrix of natural-log amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub values: Tensor,
    pub params: MelParams,
}

impl MelSpec {
    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// STFT magnitude, mel projection, amplitude floor, natural log.
pub fn melspectrogram(w: &Waveform, params: &MelParams) -> Result<MelSpec> {
    params.validate()?;
    if w.sample_rate != params.sample_rate {
        return Err(Error::config(alloc::format!(
            "waveform rate {} does not match mel rate {}",
            w.sample_rate,
            params.sample_rate
        )));
    }
    let stft = Stft::new(params.fft_size, params.hop);
    let frames = stft.frames(w.samples.len());
    if frames == 0 {
        return Err(Error::contract(alloc::format!(
            "{} samples is shorter than one hop of {}",
            w.samples.len(),
            params.hop
        )));
    }
    let bank = MelFilterbank::new(params);
    let floor = params.floor as f64;
    let mut values = vec![0f32; params.n_mels * frames];
    for (t, spec) in stft.forward(&w.samples).iter().enumerate() {
        let mag: Vec<f64> = spec.iter().map(|c| c.norm()).collect();
        for (m, v) in bank.apply(&mag).into_iter().enumerate() {
            values[m * frames + t] = libm::log(v.max(floor)) as f32;
        }
    }
    Ok(MelSpec {
        values: Tensor::new(&[params.n_mels, frames], values)?,
        params: *params,
    })
}
