//! Raw buffer kernels shared by the forward and backward passes.
//!
//! Every dot product accumulates in `f64` and rounds once on store.

use alloc::vec;
use alloc::vec::Vec;

/// `a (m×k) · b (k×n)`.
pub fn mm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0f32; m * n];
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let aik = aik as f64;
            let brow = &b[kk * n..(kk + 1) * n];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += aik * bv as f64;
            }
        }
        for (o, s) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = *s as f32;
        }
    }
    out
}

/// `aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn mm_tn(a: &[f32], b: &[f32], k: usize, m: usize, n: usize) -> Vec<f32> {
    let mut acc = vec![0f64; m * n];
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let aki = aki as f64;
            for (s, &bv) in acc[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *s += aki * bv as f64;
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// `a · bᵀ` where `a` is `m×k` and `b` is stored `n×k`.
pub fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let s: f64 = arow
                .iter()
                .zip(brow)
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
            out[i * n + j] = s as f32;
        }
    }
    out
}

/// Geometry of a 2-D correlation over a `(C, H, W)` input.
///
/// Output cell `(oy, ox)` reads input `(oy·sh + ky − ph, ox·sw + kx − pw)`; reads
/// outside the input are zero. Output extents are explicit so that causal
/// (left-padded only) layouts fit the same description.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    /// Symmetric zero padding, the usual `(n + 2p − k)/s + 1` output rule.
    pub fn symmetric(
        in_hw: (usize, usize),
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Option<Self> {
        let out = |n: usize, k: usize, s: usize, p: usize| {
            (n + 2 * p).checked_sub(k).map(|v| v / s + 1)
        };
        Some(ConvGeom {
            in_h: in_hw.0,
            in_w: in_hw.1,
            out_h: out(in_hw.0, kernel.0, stride.0, pad.0)?,
            out_w: out(in_hw.1, kernel.1, stride.1, pad.1)?,
            k_h: kernel.0,
            k_w: kernel.1,
            stride_h: stride.0,
            stride_w: stride.1,
            pad_h: pad.0,
            pad_w: pad.1,
        })
    }

    /// One-dimensional layout (`H = 1`) with `pad` zeros on the left only.
    pub fn line(in_len: usize, out_len: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            in_h: 1,
            in_w: in_len,
            out_h: 1,
            out_w: out_len,
            k_h: 1,
            k_w: kernel,
            stride_h: 1,
            stride_w: stride,
            pad_h: 0,
            pad_w: pad,
        }
    }

    pub fn patch(&self) -> usize {
        self.k_h * self.k_w
    }

    pub fn out_cells(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_cells(&self) -> usize {
        self.in_h * self.in_w
    }

    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride_h + ky).checked_sub(self.pad_h)?;
        let x = (ox * self.stride_w + kx).checked_sub(self.pad_w)?;
        (y < self.in_h && x < self.in_w).then_some(y * self.in_w + x)
    }
}

/// Unfolds `(C, in_h, in_w)` into `(C·k_h·k_w, out_h·out_w)`.
pub fn im2col(x: &[f32], channels: usize, g: &ConvGeom) -> Vec<f32> {
    let q = g.out_cells();
    let mut cols = vec![0f32; channels * g.patch() * q];
    for c in 0..channels {
        let plane = &x[c * g.in_cells()..(c + 1) * g.in_cells()];
        for ky in 0..g.k_h {
            for kx in 0..g.k_w {
                let row = (c * g.k_h + ky) * g.k_w + kx;
                let dst = &mut cols[row * q..(row + 1) * q];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some(src) = g.source(oy, ox, ky, kx) {
                            dst[oy * g.out_w + ox] = plane[src];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto `(C, in_h, in_w)`.
pub fn col2im(cols: &[f32], channels: usize, g: &ConvGeom) -> Vec<f32> {
    let q = g.out_cells();
    let mut acc = vec![0f64; channels * g.in_cells()];
    for c in 0..channels {
        let plane = &mut acc[c * g.in_cells()..(c + 1) * g.in_cells()];
        for ky in 0..g.k_h {
            for kx in 0..g.k_w {
                let row = (c * g.k_h + ky) * g.k_w + kx;
                let src = &cols[row * q..(row + 1) * q];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some(dst) = g.source(oy, ox, ky, kx) {
                            plane[dst] += src[oy * g.out_w + ox] as f64;
                        }
                    }
                }
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}
