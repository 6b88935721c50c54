use alloc::vec::Vec;

use crate::codes::CodeGrid;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Snaps every cell of a `(D, rows, cols)` latent to its nearest codeword
/// under squared Euclidean distance. Ties go to the lowest index.
///
/// Returns the quantized latent (same layout as `z_e`) and the index grid.
pub fn quantize(z_e: &Tensor, codewords: &Tensor) -> Result<(Tensor, CodeGrid)> {
    let (zs, cs) = (z_e.shape(), codewords.shape());
    if zs.len() != 3 || cs.len() != 2 || zs[0] != cs[1] {
        return Err(Error::dim("quantize", zs, cs));
    }
    if !codewords.is_finite() {
        return Err(Error::contract("codebook contains non-finite entries"));
    }
    let (d, rows, cols) = (zs[0], zs[1], zs[2]);
    let cells = rows * cols;
    let z = z_e.data();
    let book = codewords.data();
    let mut indices = Vec::with_capacity(cells);
    let mut cell = alloc::vec![0.0f64; d];
    for c in 0..cells {
        for (j, v) in cell.iter_mut().enumerate() {
            *v = z[j * cells + c] as f64;
        }
        let mut best = (0, f64::INFINITY);
        for (k, word) in book.chunks_exact(d).enumerate() {
            let dist: f64 = cell
                .iter()
                .zip(word)
                .map(|(&a, &b)| (a - b as f64) * (a - b as f64))
                .sum();
            if dist < best.1 {
                best = (k, dist);
            }
        }
        if !best.1.is_finite() {
            return Err(Error::Numerical(alloc::format!(
                "latent cell {c} has no finite distance to the codebook"
            )));
        }
        indices.push(best.0);
    }
    let mut q = alloc::vec![0.0f32; d * cells];
    for (c, &k) in indices.iter().enumerate() {
        for j in 0..d {
            q[j * cells + c] = book[k * d + j];
        }
    }
    Ok((Tensor::new(zs, q)?, CodeGrid::new(rows, cols, indices)?))
}
