use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

/// Clip length every waveform is normalised to.
pub const CLIP_SECONDS: u32 = 4;
pub const SOURCE_RATE: u32 = 22_050;
pub const MODEL_RATE: u32 = 24_000;

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().map(|&v| v as f64 * v as f64).sum();
        libm::sqrt(ss / self.samples.len() as f64)
    }

    /// Zero-pads at the end or crops around the centre to exactly `len` samples.
    pub fn fit_length(mut self, len: usize) -> Self {
        let n = self.samples.len();
        if n < len {
            self.samples.resize(len, 0.0);
        } else if n > len {
            let start = (n - len) / 2;
            self.samples = self.samples[start..start + len].to_vec();
        }
        self
    }

    /// Pads or crops to the standard clip length at the current rate.
    pub fn fit_clip(self) -> Self {
        let len = (self.sample_rate * CLIP_SECONDS) as usize;
        self.fit_length(len)
    }
}

/// Half-width of the resampling kernel, in source samples at unit cutoff.
const SINC_HALF_WIDTH: usize = 32;

fn sinc(x: f64) -> f64 {
    if libm::fabs(x) < 1e-12 {
        1.0
    } else {
        libm::sin(PI * x) / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel. The cutoff sits at
/// the lower of the two Nyquist frequencies. Output length is
/// `round(len · target / source)`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::config("resample target rate must be positive"));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let src_rate = w.sample_rate as f64;
    let ratio = target_rate as f64 / src_rate;
    let out_len = libm::round(w.samples.len() as f64 * ratio) as usize;
    let cutoff = ratio.min(1.0);
    let half = libm::ceil(SINC_HALF_WIDTH as f64 / cutoff) as isize;
    let x = &w.samples;
    let samples = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let centre = libm::floor(t) as isize;
            let mut acc = 0f64;
            for k in (centre - half + 1)..=(centre + half) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let d = t - k as f64;
                let win = 0.5 + 0.5 * libm::cos(PI * d / half as f64);
                acc += x[k as usize] as f64 * cutoff * sinc(cutoff * d) * win;
            }
            acc as f32
        })
        .collect();
    Ok(Waveform::new(samples, target_rate))
}
