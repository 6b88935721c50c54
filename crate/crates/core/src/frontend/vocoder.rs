//! Griffin-Lim reconstruction of audio from a log-mel spectrogram.
//!
//! A listening aid, not a neural vocoder: mel amplitudes are mapped back to
//! linear STFT magnitudes through the filterbank pseudo-inverse, then phase is
//! refined by alternating projections.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::audio::Waveform;
use super::fft::Stft;
use super::mel::{MelFilterbank, MelParams, MelSpec};
use crate::error::{Error, Result};

/// Pseudo-inverse of the mel filterbank, `n_bins × n_mels`.
fn filterbank_pinv(bank: &MelFilterbank) -> Result<DMatrix<f64>> {
    let m = DMatrix::from_row_slice(bank.n_mels, bank.n_bins, &bank.weights);
    m.pseudo_inverse(1e-10)
        .map_err(|e| Error::Numerical(alloc::string::ToString::to_string(e)))
}

/// Linear magnitude estimate per frame, `frames × bins`.
fn linear_magnitudes(m: &MelSpec) -> Result<Vec<Vec<f64>>> {
    let p: &MelParams = &m.params;
    let bank = MelFilterbank::new(p);
    if bank.n_mels != m.n_mels() {
        return Err(Error::dim("invert_mel", m.values.shape(), &[bank.n_mels]));
    }
    let pinv = filterbank_pinv(&bank)?;
    let frames = m.frames();
    let floor = p.log_floor();
    let v = m.values.data();
    Ok((0..frames)
        .map(|t| {
            let amp = nalgebra::DVector::from_iterator(
                bank.n_mels,
                (0..bank.n_mels).map(|r| {
                    let x = v[r * frames + t];
                    if x <= floor {
                        0.0
                    } else {
                        libm::exp(x as f64)
                    }
                }),
            );
            (&pinv * amp).iter().map(|&s| s.max(0.0)).collect()
        })
        .collect())
}

/// Reconstructs `frames · hop` samples at the spectrogram's rate.
///
/// `iterations == 0` returns the zero-phase reconstruction; each further
/// iteration re-estimates phase from the previous waveform.
pub fn invert_mel(m: &MelSpec, iterations: usize) -> Result<Waveform> {
    m.params.validate()?;
    let stft = Stft::new(m.params.fft_size, m.params.hop);
    let len = m.frames() * m.params.hop;
    let mags = linear_magnitudes(m)?;

    let zero_phase: Vec<Vec<Complex64>> = mags
        .iter()
        .map(|row| row.iter().map(|&a| Complex64::new(a, 0.0)).collect())
        .collect();
    let mut signal = stft.inverse(&zero_phase, len);

    for _ in 0..iterations {
        let spectra = stft.forward(&signal);
        let rebuilt: Vec<Vec<Complex64>> = spectra
            .iter()
            .zip(&mags)
            .map(|(spec, row)| {
                spec.iter()
                    .zip(row)
                    .map(|(c, &a)| {
                        let n = c.norm();
                        if n > 1e-12 {
                            c * (a / n)
                        } else {
                            Complex64::new(a, 0.0)
                        }
                    })
                    .collect()
            })
            .collect();
        signal = stft.inverse(&rebuilt, len);
    }
    for s in signal.iter_mut() {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(Waveform::new(signal, m.params.sample_rate))
}
