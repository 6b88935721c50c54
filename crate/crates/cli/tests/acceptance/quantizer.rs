use rand::Rng;
use zenfoley::core::vqvae::quantize;
use zenfoley::core::Tensor;

use crate::fd::rng;
use crate::{ensure, Outcome};

/// Exhaustive nearest codeword; a later codeword wins only when strictly
/// closer.
fn nearest(cell: &[f64], book: &Tensor) -> usize {
    let d = cell.len();
    let (mut best, mut best_d) = (0, f64::INFINITY);
    for k in 0..book.shape()[0] {
        let dist: f64 = (0..d).map(|j| (cell[j] - book.data()[k * d + j] as f64).powi(2)).sum();
        if dist < best_d {
            best = k;
            best_d = dist;
        }
    }
    best
}

pub fn run() -> Outcome {
    let (d, k, rows, cols) = (4, 16, 25, 40);
    let mut r = rng(2024);
    // Integer codewords with a duplicate and half-integer cells, so exact
    // distance ties are frequent.
    let mut book: Vec<f32> = (0..k * d).map(|_| r.gen_range(-2..=2) as f32).collect();
    let dup = book[3 * d..4 * d].to_vec();
    book[9 * d..10 * d].copy_from_slice(&dup);
    let book = Tensor::new(&[k, d], book).unwrap();
    let z: Vec<f32> = (0..d * rows * cols).map(|_| r.gen_range(-5..=5) as f32 * 0.5).collect();
    let z = Tensor::new(&[d, rows, cols], z).unwrap();
    let (q, grid) = quantize(&z, &book).map_err(|e| e.to_string())?;

    let cells = rows * cols;
    let (mut agree, mut ties) = (0, 0);
    for c in 0..cells {
        let cell: Vec<f64> = (0..d).map(|j| z.data()[j * cells + c] as f64).collect();
        let want = nearest(&cell, &book);
        ensure(grid.raster()[c] == want, || {
            format!("cell {c}: quantizer chose {}, exhaustive search {want}", grid.raster()[c])
        })?;
        ensure((0..d).all(|j| q.data()[j * cells + c] == book.data()[want * d + j]), || {
            format!("cell {c}: quantized value is not codeword {want}")
        })?;
        agree += 1;
        let dists: Vec<f64> = (0..k)
            .map(|kk| (0..d).map(|j| (cell[j] - book.data()[kk * d + j] as f64).powi(2)).sum())
            .collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        if dists.iter().filter(|&&x| x == min).count() > 1 {
            ties += 1;
        }
    }
    ensure(ties >= 50, || format!("only {ties} tied cells exercised"))?;
    Ok(format!("{agree}/{cells} cells agree, {ties} resolved by the lowest-index tie rule"))
}
