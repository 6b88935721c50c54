//! Radix-2 complex FFT and a Hann-windowed STFT built on it.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

/// In-place iterative Cooley-Tukey transform. `buf.len()` must be a power of
/// two. `inverse` applies the conjugate twiddles and the `1/n` scale.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let step = Complex64::new(libm::cos(ang), libm::sin(ang));
        for chunk in buf.chunks_mut(len) {
            let mut w = Complex64::new(1.0, 0.0);
            let (lo, hi) = chunk.split_at_mut(len / 2);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let t = *b * w;
                *b = *a - t;
                *a += t;
                w *= step;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
        .collect()
}

/// Framing shared by the forward and inverse transforms: `frames` windows of
/// `fft_size` samples, window `t` centred on sample `t·hop`, zeros outside the
/// signal.
#[derive(Clone, Debug)]
pub struct Stft {
    pub fft_size: usize,
    pub hop: usize,
    window: Vec<f64>,
}

impl Stft {
    pub fn new(fft_size: usize, hop: usize) -> Self {
        Stft {
            fft_size,
            hop,
            window: hann(fft_size),
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        len / self.hop
    }

    /// One-sided spectra, frame-major: `frames × bins`.
    pub fn forward(&self, signal: &[f32]) -> Vec<Vec<Complex64>> {
        let half = self.fft_size / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        (0..self.frames(signal.len()))
            .map(|t| {
                let centre = t * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    let pos = (centre + i).checked_sub(half);
                    let s = pos.and_then(|p| signal.get(p)).copied().unwrap_or(0.0);
                    *b = Complex64::new(s as f64 * self.window[i], 0.0);
                }
                fft_in_place(&mut buf, false);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse producing `len` samples.
    pub fn inverse(&self, spectra: &[Vec<Complex64>], len: usize) -> Vec<f32> {
        let half = self.fft_size / 2;
        let mut out = vec![0f64; len];
        let mut norm = vec![0f64; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        for (t, spec) in spectra.iter().enumerate() {
            buf[..spec.len()].copy_from_slice(spec);
            for k in 1..self.fft_size - spec.len() + 1 {
                buf[self.fft_size - k] = spec[k].conj();
            }
            fft_in_place(&mut buf, true);
            let centre = t * self.hop;
            for (i, b) in buf.iter().enumerate() {
                let Some(pos) = (centre + i).checked_sub(half) else { continue };
                if pos >= len {
                    break;
                }
                out[pos] += b.re * self.window[i];
                norm[pos] += self.window[i] * self.window[i];
            }
        }
        out.iter()
            .zip(&norm)
            .map(|(&v, &w)| if w > 1e-8 { (v / w) as f32 } else { 0.0 })
            .collect()
    }
}
