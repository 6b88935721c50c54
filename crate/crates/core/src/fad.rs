//! Fréchet audio distance between Gaussian fits of two embedding sets.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::category::CategoryLabel;
use crate::error::{Error, Result};
use crate::frontend::MelSpec;

/// Eigenvalues below zero but above this are treated as rounding and clamped.
pub const PSD_TOLERANCE: f64 = 1e-6;

/// Embedding width of the spectral-statistics backend for a mel with
/// `n_mels` rows: one mean and one standard deviation per row.
pub fn spectral_stats_dim(n_mels: usize) -> usize {
    2 * n_mels
}

/// Per-row mean followed by per-row (population) standard deviation of a
/// log-mel spectrogram.
pub fn spectral_stats_embedding(m: &MelSpec) -> Vec<f64> {
    let (rows, frames) = (m.n_mels(), m.frames());
    let v = m.values.data();
    let mut means = Vec::with_capacity(rows);
    let mut stds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &v[r * frames..(r + 1) * frames];
        let mean = row.iter().map(|&x| x as f64).sum::<f64>() / frames as f64;
        let var = row
            .iter()
            .map(|&x| (x as f64 - mean) * (x as f64 - mean))
            .sum::<f64>()
            / frames as f64;
        means.push(mean);
        stds.push(libm::sqrt(var));
    }
    means.extend(stds);
    means
}

/// A `(num_clips, dim)` matrix of clip embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub backend: String,
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(backend: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::contract("embedding set needs at least one non-empty row"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::dim("embedding set", &[dim], &[bad.len()]));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("embedding set contains non-finite values".into()));
        }
        Ok(EmbeddingSet {
            backend: backend.into(),
            dim,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Mean and unbiased covariance of an embedding set.
#[derive(Clone, Debug, PartialEq)]
pub struct FrechetStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

pub fn gaussian_stats(e: &EmbeddingSet) -> Result<FrechetStats> {
    let n = e.len();
    if n < 2 {
        return Err(Error::contract(alloc::format!(
            "covariance needs at least 2 clips, got {n}"
        )));
    }
    let d = e.dim();
    let mut mu = DVector::zeros(d);
    for row in e.rows() {
        mu += DVector::from_column_slice(row);
    }
    mu /= n as f64;
    let mut centred = DMatrix::zeros(n, d);
    for (i, row) in e.rows().iter().enumerate() {
        for j in 0..d {
            centred[(i, j)] = row[j] - mu[j];
        }
    }
    let c = centred.transpose() * &centred / (n - 1) as f64;
    let sigma = (&c + c.transpose()) * 0.5;
    Ok(FrechetStats { mu, sigma })
}

/// Square root of a symmetric positive semi-definite matrix by
/// eigendecomposition. Eigenvalues in `[-PSD_TOLERANCE, 0)` are clamped to
/// zero; anything more negative is an error.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -PSD_TOLERANCE {
            return Err(Error::Numerical(alloc::format!(
                "matrix is not positive semi-definite (eigenvalue {l:e})"
            )));
        }
        roots[i] = libm::sqrt(l.max(0.0));
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`, with the cross term
/// evaluated as `tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`, which has the same
/// trace and stays symmetric.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    let d = a.mu.len();
    if b.mu.len() != d || a.sigma.shape() != (d, d) || b.sigma.shape() != (d, d) {
        return Err(Error::dim("frechet_distance", &[d], &[b.mu.len()]));
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let root_a = sqrtm_psd(&a.sigma)?;
    let inner = &root_a * &b.sigma * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let mut cross = 0.0;
    for &l in inner.symmetric_eigenvalues().iter() {
        if l < -PSD_TOLERANCE {
            return Err(Error::Numerical(alloc::format!(
                "covariance product is not positive semi-definite (eigenvalue {l:e})"
            )));
        }
        cross += libm::sqrt(l.max(0.0));
    }
    Ok(mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FadEntry {
    pub category: CategoryLabel,
    /// Raw distance; may sit a hair below zero from rounding.
    pub fad: f64,
    pub n_generated: usize,
    pub n_reference: usize,
}

impl FadEntry {
    /// Value as reported: tiny negative rounding clamped to zero.
    pub fn reported(&self) -> f64 {
        self.fad.max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FadReport {
    pub backend: String,
    pub entries: Vec<FadEntry>,
}

/// One FAD per category, generated against reference. Both sides must cover
/// the same categories.
pub fn evaluate_fad(
    backend: &str,
    generated: &[(CategoryLabel, Vec<f64>)],
    reference: &[(CategoryLabel, Vec<f64>)],
) -> Result<FadReport> {
    let group = |items: &[(CategoryLabel, Vec<f64>)]| {
        let mut by: Vec<Vec<Vec<f64>>> = vec![Vec::new(); crate::category::NUM_CATEGORIES];
        for (l, e) in items {
            by[l.id()].push(e.clone());
        }
        by
    };
    let (gen, refs) = (group(generated), group(reference));
    let mut entries = Vec::new();
    for label in CategoryLabel::all() {
        let (g, r) = (&gen[label.id()], &refs[label.id()]);
        match (g.is_empty(), r.is_empty()) {
            (true, true) => continue,
            (false, false) => {}
            _ => {
                return Err(Error::Coverage(alloc::format!(
                    "category {label} has {} generated and {} reference clips",
                    g.len(),
                    r.len()
                )))
            }
        }
        let gs = gaussian_stats(&EmbeddingSet::new(backend, g.clone())?)?;
        let rs = gaussian_stats(&EmbeddingSet::new(backend, r.clone())?)?;
        entries.push(FadEntry {
            category: label,
            fad: frechet_distance(&gs, &rs)?,
            n_generated: g.len(),
            n_reference: r.len(),
        });
    }
    Ok(FadReport {
        backend: backend.into(),
        entries,
    })
}
