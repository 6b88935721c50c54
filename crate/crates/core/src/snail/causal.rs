//! Causal 1-D convolutions over `(C, 1, N)` sequences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::nn::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

fn seq_shape(g: &Graph, x: Var, op: &'static str) -> Result<(usize, usize)> {
    let s = g.shape(x);
    if s.len() != 3 || s[1] != 1 {
        return Err(Error::dim(op, s, &[0, 1, 0]));
    }
    Ok((s[0], s[2]))
}

/// `y[m] = Σ_k w[k]·x[m·S + k − (L − 1)]`: left padding only, so output `m`
/// reads inputs up to `m·S`. Output length `⌈N / S⌉`.
///
/// `x` is `(Cin, 1, N)` and `w` is `(Cout, Cin, 1, L)`.
pub fn causal_conv(g: &mut Graph, x: Var, w: Var, stride: usize) -> Result<Var> {
    let (_, n) = seq_shape(g, x, "causal_conv")?;
    let ws = g.shape(w);
    if ws.len() != 4 || ws[2] != 1 || stride == 0 {
        return Err(Error::dim("causal_conv", ws, &[stride]));
    }
    let l = ws[3];
    let geom = ConvGeom::line(n, n.div_ceil(stride), l, stride, l - 1);
    g.conv2d(x, w, geom)
}

/// `y[t] = Σ_u w[t − u·S]·x[u]` for `0 ≤ t < out_len`, so output `t` reads
/// only inputs `u ≤ t / S`.
///
/// `x` is `(Cin, 1, M)` and `w` is `(Cin, Cout, 1, k)`. The natural output
/// length is `M·S`; positions past the kernel's reach are zero. `out_len` may
/// be anything up to `max(M·S, (M − 1)·S + k)`.
pub fn causal_conv_transpose(
    g: &mut Graph,
    x: Var,
    w: Var,
    stride: usize,
    out_len: usize,
) -> Result<Var> {
    let (_, m) = seq_shape(g, x, "causal_conv_transpose")?;
    let ws = g.shape(w);
    if ws.len() != 4 || ws[2] != 1 || stride == 0 {
        return Err(Error::dim("causal_conv_transpose", ws, &[stride]));
    }
    let k = ws[3];
    let full = ((m - 1) * stride + k).max(m * stride);
    if out_len == 0 || out_len > full {
        return Err(Error::dim("causal_conv_transpose", &[out_len], &[full]));
    }
    let geom = ConvGeom::line(full, m, k, stride, 0);
    let y = g.conv_transpose2d(x, w, geom)?;
    if out_len == full {
        return Ok(y);
    }
    g.slice(y, 2, 0, out_len)
}

/// Causal convolution layer with bias.
#[derive(Clone, Debug)]
pub struct CausalConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl CausalConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let bound = libm::sqrtf(1.0 / (cin * kernel) as f32);
        CausalConv {
            weight: store.add(
                alloc::format!("{name}.weight"),
                Tensor::uniform(&[cout, cin, 1, kernel], bound, rng),
            ),
            bias: store.add(
                alloc::format!("{name}.bias"),
                Tensor::uniform(&[cout, 1, 1], bound, rng),
            ),
            stride,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize) -> Self {
        CausalConv {
            weight: store.add(alloc::format!("{name}.weight"), Tensor::zeros(&[cout, cin, 1, kernel])),
            bias: store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[cout, 1, 1])),
            stride: 1,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = causal_conv(g, x, p.var(self.weight), self.stride)?;
        g.add(y, p.var(self.bias))
    }
}

/// Causal transposed convolution layer with bias.
#[derive(Clone, Debug)]
pub struct CausalConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl CausalConvTranspose {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let bound = libm::sqrtf(stride as f32 / (cin * kernel) as f32);
        CausalConvTranspose {
            weight: store.add(
                alloc::format!("{name}.weight"),
                Tensor::uniform(&[cin, cout, 1, kernel], bound, rng),
            ),
            bias: store.add(
                alloc::format!("{name}.bias"),
                Tensor::uniform(&[cout, 1, 1], bound, rng),
            ),
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, out_len: usize) -> Result<Var> {
        let y = causal_conv_transpose(g, x, p.var(self.weight), self.stride, out_len)?;
        g.add(y, p.var(self.bias))
    }
}
