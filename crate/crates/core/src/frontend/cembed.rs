//! External feature matrices, combined embeddings and masking augmentation.

use alloc::vec::Vec;
use core::borrow::Borrow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mel::MelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature rows per frame delivered by the pretrained encoder.
pub const FEATURE_ROWS: usize = 1023;
pub const MEL_ROWS: usize = 129;
pub const FRAMES: usize = 300;

/// A `(rows, frames)` matrix of externally computed features.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalFeatures {
    pub values: Tensor,
}

impl ExternalFeatures {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::dim("external features", values.shape(), &[]));
        }
        if !values.is_finite() {
            return Err(Error::Numerical("external features contain non-finite values".into()));
        }
        Ok(ExternalFeatures { values })
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// SplitMix64 step. Constants are Steele, Lea & Flood's published ones.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stand-in for encoder features.
///
/// Cells are filled row-major from a SplitMix64 stream started at `seed`; each
/// output keeps the top 24 bits, `v = 2·(bits / 2²⁴) − 1`, so every value is
/// exactly representable and lies in `[-1, 1)` on every platform.
pub fn stub_features(seed: u64, rows: usize, cols: usize) -> Result<ExternalFeatures> {
    if rows == 0 || cols == 0 {
        return Err(Error::contract("stub feature extents must be positive"));
    }
    let mut state = seed;
    let data = (0..rows * cols)
        .map(|_| {
            let bits = (splitmix64(&mut state) >> 40) as f32;
            bits / (1u32 << 24) as f32 * 2.0 - 1.0
        })
        .collect();
    ExternalFeatures::new(Tensor::new(&[rows, cols], data)?)
}

/// Mel rows stacked above feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CEmbed {
    pub values: Tensor,
    pub mel_rows: usize,
}

impl CEmbed {
    pub fn new(values: Tensor, mel_rows: usize) -> Result<Self> {
        if values.rank() != 2 || mel_rows == 0 || mel_rows >= values.shape()[0] {
            return Err(Error::dim("cembed", values.shape(), &[mel_rows]));
        }
        Ok(CEmbed { values, mel_rows })
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn feature_rows(&self) -> usize {
        self.rows() - self.mel_rows
    }

    pub fn mel_part(&self) -> Tensor {
        self.values.rows(0, self.mel_rows).expect("mel band in range")
    }

    pub fn feature_part(&self) -> Tensor {
        self.values
            .rows(self.mel_rows, self.rows())
            .expect("feature band in range")
    }
}

pub fn assemble_cembed(mel: &MelSpec, features: &ExternalFeatures) -> Result<CEmbed> {
    assemble_parts(&mel.values, &features.values)
}

/// Vertical concatenation of a mel matrix and a feature matrix.
pub fn assemble_parts(mel: &Tensor, features: &Tensor) -> Result<CEmbed> {
    if mel.rank() != 2 || features.rank() != 2 {
        return Err(Error::dim("assemble_cembed", mel.shape(), features.shape()));
    }
    if mel.shape()[1] != features.shape()[1] {
        return Err(Error::Alignment {
            mel_frames: mel.shape()[1],
            feature_frames: features.shape()[1],
        });
    }
    CEmbed::new(Tensor::vstack(&[mel, features])?, mel.shape()[0])
}

/// Settings for masking augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub time_mask_max_frames: usize,
    pub freq_mask_max_rows: usize,
    pub num_masks_per_kind: usize,
    pub seed: u64,
}

/// One rectangular mask inside a sub-band, in sub-band coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    /// Frames `start..start + len` across every row of the sub-band.
    Time { start: usize, len: usize },
    /// Rows `start..start + len` across every frame.
    Freq { start: usize, len: usize },
}

impl Mask {
    pub fn contains(&self, row: usize, frame: usize) -> bool {
        match *self {
            Mask::Time { start, len } => frame >= start && frame < start + len,
            Mask::Freq { start, len } => row >= start && row < start + len,
        }
    }
}

impl MaskSpec {
    /// Draws masks for one sub-band. Band 0 is the mel band, band 1 the
    /// feature band; each band reads its own ChaCha stream so the two draws
    /// are independent.
    pub fn draw(&self, band: u64, rows: usize, frames: usize) -> Result<Vec<Mask>> {
        if self.num_masks_per_kind == 0 {
            return Ok(Vec::new());
        }
        if self.time_mask_max_frames > frames || self.freq_mask_max_rows > rows {
            return Err(Error::config(alloc::format!(
                "mask extents ({} frames, {} rows) exceed sub-band ({frames} frames, {rows} rows)",
                self.time_mask_max_frames,
                self.freq_mask_max_rows
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(band);
        let mut masks = Vec::with_capacity(2 * self.num_masks_per_kind);
        for _ in 0..self.num_masks_per_kind {
            if self.time_mask_max_frames > 0 {
                let len = rng.gen_range(1..=self.time_mask_max_frames);
                let start = rng.gen_range(0..=frames - len);
                masks.push(Mask::Time { start, len });
            }
            if self.freq_mask_max_rows > 0 {
                let len = rng.gen_range(1..=self.freq_mask_max_rows);
                let start = rng.gen_range(0..=rows - len);
                masks.push(Mask::Freq { start, len });
            }
        }
        Ok(masks)
    }
}

/// Time and frequency masking drawn independently for the mel and feature
/// sub-bands. Masked cells take the mean of their sub-band.
pub fn mask_augment(c: &CEmbed, spec: &MaskSpec) -> Result<CEmbed> {
    let frames = c.frames();
    let bands = [(0, c.mel_rows), (c.mel_rows, c.rows())];
    let mut out = c.values.clone();
    for (band, &(lo, hi)) in bands.iter().enumerate() {
        let masks = spec.draw(band as u64, hi - lo, frames)?;
        if masks.is_empty() {
            continue;
        }
        let src = &c.values.data()[lo * frames..hi * frames];
        let mean = (src.iter().map(|&v| v as f64).sum::<f64>() / src.len() as f64) as f32;
        let dst = &mut out.data_mut()[lo * frames..hi * frames];
        for r in 0..hi - lo {
            for t in 0..frames {
                if masks.iter().any(|m| m.contains(r, t)) {
                    dst[r * frames + t] = mean;
                }
            }
        }
    }
    CEmbed::new(out, c.mel_rows)
}

/// Corpus-level mean and standard deviation for each row family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusStats {
    pub mel_mean: f32,
    pub mel_std: f32,
    pub feature_mean: f32,
    pub feature_std: f32,
}

impl Default for CorpusStats {
    fn default() -> Self {
        CorpusStats {
            mel_mean: 0.0,
            mel_std: 1.0,
            feature_mean: 0.0,
            feature_std: 1.0,
        }
    }
}

impl CorpusStats {
    /// Single pass over the corpus with 64-bit sums.
    pub fn compute<C: Borrow<CEmbed>>(items: impl IntoIterator<Item = C>) -> Result<Self> {
        let mut acc = [[0f64; 3]; 2];
        for c in items {
            let c = c.borrow();
            let split = c.mel_rows * c.frames();
            for (i, part) in [&c.values.data()[..split], &c.values.data()[split..]]
                .into_iter()
                .enumerate()
            {
                for &v in part {
                    acc[i][0] += 1.0;
                    acc[i][1] += v as f64;
                    acc[i][2] += v as f64 * v as f64;
                }
            }
        }
        if acc[0][0] == 0.0 || acc[1][0] == 0.0 {
            return Err(Error::contract("corpus statistics need at least one clip"));
        }
        let fam = |a: [f64; 3]| {
            let mean = a[1] / a[0];
            let var = (a[2] / a[0] - mean * mean).max(0.0);
            (mean as f32, (libm::sqrt(var) as f32).max(1e-6))
        };
        let (mel_mean, mel_std) = fam(acc[0]);
        let (feature_mean, feature_std) = fam(acc[1]);
        Ok(CorpusStats {
            mel_mean,
            mel_std,
            feature_mean,
            feature_std,
        })
    }

    fn map(&self, c: &CEmbed, f: impl Fn(f32, f32, f32) -> f32) -> CEmbed {
        let split = c.mel_rows * c.frames();
        let mut out = c.clone();
        for (i, v) in out.values.data_mut().iter_mut().enumerate() {
            *v = if i < split {
                f(*v, self.mel_mean, self.mel_std)
            } else {
                f(*v, self.feature_mean, self.feature_std)
            };
        }
        out
    }

    pub fn standardize(&self, c: &CEmbed) -> CEmbed {
        self.map(c, |v, m, s| (v - m) / s)
    }

    pub fn destandardize(&self, c: &CEmbed) -> CEmbed {
        self.map(c, |v, m, s| v * s + m)
    }
}
