//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Graph`] evaluates eagerly and appends one node to
//! the tape. Node inputs always precede the node, so [`Graph::backward`] is a
//! single reverse sweep that visits each node once.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Value written into masked attention logits. Finite, and far enough below any
/// real logit that `exp` underflows to exactly zero.
pub const MASKED_LOGIT: f32 = -1.0e30;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var, Option<Vec<usize>>),
    Sub(Var, Var, Option<Vec<usize>>),
    Mul(Var, Var, Option<Vec<usize>>),
    Scale(Var, f32),
    Offset(Var),
    Elu(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanLast(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat0(Vec<Var>),
    Slice {
        src: Var,
        axis_len: usize,
        inner: usize,
        start: usize,
    },
    Embed {
        table: Var,
        indices: Vec<usize>,
    },
    GatherLast {
        src: Var,
        indices: Vec<usize>,
    },
    Conv {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    CausalMask(Var),
    StopGradient,
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_or_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Option<Vec<usize>>> {
    if a == b {
        return Ok(None);
    }
    let numel: usize = a.iter().product();
    let b_numel: usize = b.iter().product();
    if b_numel == 1 {
        return Ok(Some(vec![0; numel]));
    }
    if a.len() != b.len() || a.iter().zip(b).any(|(&x, &y)| y != x && y != 1) {
        return Err(Error::dim(op, a, b));
    }
    // Row/column style expansion: every size-1 axis of `b` is repeated.
    let mut b_strides = vec![0usize; b.len()];
    let mut s = 1;
    for d in (0..b.len()).rev() {
        b_strides[d] = if b[d] == 1 { 0 } else { s };
        s *= b[d];
    }
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; a.len()];
    for _ in 0..numel {
        map.push(idx.iter().zip(&b_strides).map(|(i, s)| i * s).sum());
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            if idx[d] < a[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Some(map))
}

fn softmax_rows(x: &[f32], width: usize) -> Vec<f32> {
    let mut out = vec![0f32; x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut total = 0f64;
        for (d, &v) in dst.iter_mut().zip(src) {
            let e = libm::exp(v as f64 - max);
            total += e;
            *d = e as f32;
        }
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (libm::exp(v as f64 - max) / total) as f32;
        }
    }
    out
}

fn log_softmax_rows(x: &[f32], width: usize) -> Vec<f32> {
    let mut out = vec![0f32; x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max
            + libm::log(
                src.iter()
                    .map(|&v| libm::exp(v as f64 - max))
                    .sum::<f64>(),
            );
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v as f64 - lse) as f32;
        }
    }
    out
}

fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + libm::exp(-(x as f64)))) as f32
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let ng = self.ng(&[a]);
        self.push(value, op, ng)
    }

    /// A constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        make: impl FnOnce(Option<Vec<usize>>) -> Op,
    ) -> Result<Var> {
        let map = same_or_broadcast(name, self.shape(a), self.shape(b))?;
        let ad = self.data(a);
        let bd = self.data(b);
        let data: Vec<f32> = match &map {
            None => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Some(m) => ad.iter().zip(m).map(|(&x, &j)| f(x, bd[j])).collect(),
        };
        let value = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, make(map), ng))
    }

    /// Elementwise sum. `b` may be a scalar or expand along its size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |m| Op::Add(a, b, m))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |m| Op::Sub(a, b, m))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |m| Op::Mul(a, b, m))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |x| {
            if x > 0.0 {
                x
            } else {
                libm::expm1(x as f64) as f32
            }
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| libm::tanh(x as f64) as f32)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| libm::exp(x as f64) as f32)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| libm::log(x as f64) as f32)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().map(|&v| v as f64).sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s as f32), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s: f64 = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s as f32), Op::Mean(a), ng)
    }

    fn reduce_last(&mut self, a: Var, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (&width, rest) = shape
            .split_last()
            .ok_or(Error::Axis { op: "reduce_last", axis: 0, rank: 0 })?;
        let div = if mean { width as f64 } else { 1.0 };
        let data = self
            .data(a)
            .chunks(width)
            .map(|row| (row.iter().map(|&v| v as f64).sum::<f64>() / div) as f32)
            .collect();
        let value = Tensor::new(rest, data)?;
        let ng = self.ng(&[a]);
        let op = if mean { Op::MeanLast(a) } else { Op::SumLast(a) };
        Ok(self.push(value, op, ng))
    }

    /// Sums out the last axis.
    pub fn sum_lastdim(&mut self, a: Var) -> Result<Var> {
        self.reduce_last(a, false)
    }

    pub fn mean_lastdim(&mut self, a: Var) -> Result<Var> {
        self.reduce_last(a, true)
    }

    fn last_width(&self, op: &'static str, a: Var) -> Result<usize> {
        self.shape(a)
            .last()
            .copied()
            .ok_or(Error::Axis { op, axis: 0, rank: 0 })
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let w = self.last_width("softmax", a)?;
        let value = Tensor::new(self.shape(a), softmax_rows(self.data(a), w))?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Softmax(a), ng))
    }

    pub fn log_softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let w = self.last_width("log_softmax", a)?;
        let value = Tensor::new(self.shape(a), log_softmax_rows(self.data(a), w))?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::mm(self.data(a), self.data(b), m, k, n);
        let value = Tensor::new(&[m, n], data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Axis { op: "transpose", axis: 1, rank: s.len() });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.data(a);
        let mut data = vec![0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshape(shape)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Concatenation along the leading axis.
    pub fn concat_axis0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::dim("concat_axis0", self.shape(*first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(&shape, data)?;
        let ng = self.ng(parts);
        Ok(self.push(value, Op::Concat0(parts.to_vec()), ng))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis { op: "slice", axis, rank: shape.len() });
        }
        if start >= end || end > shape[axis] {
            return Err(Error::dim("slice", &shape, &[start, end]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = end - start;
        let src = self.data(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(
            value,
            Op::Slice {
                src: a,
                axis_len: shape[axis],
                inner,
                start,
            },
            ng,
        ))
    }

    /// Rows of a `(K, D)` table selected by `indices`, giving `(n, D)`.
    pub fn embed_lookup(&mut self, indices: &[usize], table: Var) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || indices.is_empty() {
            return Err(Error::dim("embed_lookup", s, &[indices.len()]));
        }
        let (k, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::contract(alloc::format!(
                "embedding index {bad} out of range for {k} rows"
            )));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(&[indices.len(), d], data)?;
        let ng = self.ng(&[table]);
        Ok(self.push(
            value,
            Op::Embed {
                table,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Picks one entry per row of an `(n, C)` tensor, giving `(n)`.
    pub fn gather_lastdim(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != indices.len() {
            return Err(Error::dim("gather_lastdim", s, &[indices.len()]));
        }
        let c = s[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::contract(alloc::format!(
                "class index {bad} out of range for {c} columns"
            )));
        }
        let src = self.data(a);
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| src[r * c + i])
            .collect();
        let value = Tensor::new(&[indices.len()], data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(
            value,
            Op::GatherLast {
                src: a,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Correlation of `x (Cin, H, W)` with `w (Cout, Cin, kh, kw)`.
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3
            || sw.len() != 4
            || sx[0] != sw[1]
            || (sx[1], sx[2]) != (geom.in_h, geom.in_w)
            || (sw[2], sw[3]) != (geom.k_h, geom.k_w)
        {
            return Err(Error::dim("conv2d", sx, sw));
        }
        let (cin, cout) = (sx[0], sw[0]);
        let cols = kernels::im2col(self.data(x), cin, &geom);
        let data = kernels::mm(
            self.data(w),
            &cols,
            cout,
            cin * geom.patch(),
            geom.out_cells(),
        );
        let value = Tensor::new(&[cout, geom.out_h, geom.out_w], data)?;
        let ng = self.ng(&[x, w]);
        Ok(self.push(value, Op::Conv { x, w, geom }, ng))
    }

    /// Transposed correlation: the adjoint of [`Graph::conv2d`] with the same
    /// geometry, taking `x (Cin, out_h, out_w)` and `w (Cin, Cout, kh, kw)` to
    /// `(Cout, in_h, in_w)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3
            || sw.len() != 4
            || sx[0] != sw[0]
            || (sx[1], sx[2]) != (geom.out_h, geom.out_w)
            || (sw[2], sw[3]) != (geom.k_h, geom.k_w)
        {
            return Err(Error::dim("conv_transpose2d", sx, sw));
        }
        let (cin, cout) = (sx[0], sw[1]);
        let cols = kernels::mm_tn(
            self.data(w),
            self.data(x),
            cin,
            cout * geom.patch(),
            geom.out_cells(),
        );
        let data = kernels::col2im(&cols, cout, &geom);
        let value = Tensor::new(&[cout, geom.in_h, geom.in_w], data)?;
        let ng = self.ng(&[x, w]);
        Ok(self.push(value, Op::ConvTranspose { x, w, geom }, ng))
    }

    /// Overwrites entries above the diagonal of a square matrix with
    /// [`MASKED_LOGIT`].
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::dim("causal_mask", s, s));
        }
        let n = s[0];
        let mut data = self.data(a).to_vec();
        for i in 0..n {
            for v in &mut data[i * n + i + 1..(i + 1) * n] {
                *v = MASKED_LOGIT;
            }
        }
        let value = Tensor::new(&[n, n], data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::CausalMask(a), ng))
    }

    /// Identity on values; blocks every gradient to `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Takes the value of `quantized` and routes the incoming gradient to
    /// `encoded` unchanged.
    pub fn straight_through(&mut self, encoded: Var, quantized: Var) -> Result<Var> {
        if self.shape(encoded) != self.shape(quantized) {
            return Err(Error::dim(
                "straight_through",
                self.shape(encoded),
                self.shape(quantized),
            ));
        }
        let value = self.nodes[quantized.0].value.clone();
        let ng = self.ng(&[encoded]);
        Ok(self.push(value, Op::StraightThrough(encoded), ng))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let seed = Tensor::full(self.shape(loss), 1.0);
        self.backward_with(loss, &seed)
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `out`) back to
    /// every node that needs a gradient.
    pub fn backward_with(&self, out: Var, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.shape(out) {
            return Err(Error::dim("backward", self.shape(out), seed.shape()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; out.0 + 1];
        if self.nodes[out.0].needs_grad {
            grads[out.0] = Some(seed.data().to_vec());
        }
        let mut kept: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            kept[i] = Some(Tensor::new(self.nodes[i].value.shape(), g)?);
        }
        Ok(Gradients { grads: kept })
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut send = |v: Var, d: Vec<f32>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(d),
            }
        };
        let elementwise = |a: Var, f: &dyn Fn(f32, f32, f32) -> f32| -> Vec<f32> {
            self.data(a)
                .iter()
                .zip(y)
                .zip(g)
                .map(|((&x, &y), &g)| f(x, y, g))
                .collect()
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b, map) | Op::Sub(a, b, map) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                send(*a, g.to_vec());
                if self.nodes[b.0].needs_grad {
                    let db = match map {
                        None => g.iter().map(|&v| sign * v).collect(),
                        Some(m) => {
                            let mut acc = vec![0f64; self.nodes[b.0].value.numel()];
                            for (&gi, &j) in g.iter().zip(m) {
                                acc[j] += gi as f64;
                            }
                            acc.into_iter().map(|v| (sign as f64 * v) as f32).collect()
                        }
                    };
                    send(*b, db);
                }
            }
            Op::Mul(a, b, map) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.nodes[a.0].needs_grad {
                    let da = match map {
                        None => g.iter().zip(bd).map(|(&g, &b)| g * b).collect(),
                        Some(m) => g.iter().zip(m).map(|(&g, &j)| g * bd[j]).collect(),
                    };
                    send(*a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let db = match map {
                        None => g.iter().zip(ad).map(|(&g, &a)| g * a).collect(),
                        Some(m) => {
                            let mut acc = vec![0f64; bd.len()];
                            for ((&gi, &ai), &j) in g.iter().zip(ad).zip(m) {
                                acc[j] += gi as f64 * ai as f64;
                            }
                            acc.into_iter().map(|v| v as f32).collect()
                        }
                    };
                    send(*b, db);
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|&v| v * c).collect()),
            Op::Offset(a) | Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Elu(a) => send(*a, elementwise(*a, &|x, y, g| if x > 0.0 { g } else { g * (y + 1.0) })),
            Op::Relu(a) => send(*a, elementwise(*a, &|x, _, g| if x > 0.0 { g } else { 0.0 })),
            Op::Sigmoid(a) => send(*a, elementwise(*a, &|_, y, g| g * y * (1.0 - y))),
            Op::Tanh(a) => send(*a, elementwise(*a, &|_, y, g| g * (1.0 - y * y))),
            Op::Exp(a) => send(*a, elementwise(*a, &|_, y, g| g * y)),
            Op::Log(a) => send(*a, elementwise(*a, &|x, _, g| g / x)),
            Op::Square(a) => send(*a, elementwise(*a, &|x, _, g| 2.0 * x * g)),
            Op::Sum(a) => send(*a, vec![g[0]; self.nodes[a.0].value.numel()]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                send(*a, vec![(g[0] as f64 / n as f64) as f32; n]);
            }
            Op::SumLast(a) | Op::MeanLast(a) => {
                let width = *self.shape(*a).last().unwrap_or(&1);
                let div = if matches!(node.op, Op::MeanLast(_)) { width as f32 } else { 1.0 };
                let mut d = Vec::with_capacity(width * g.len());
                for &gi in g {
                    d.extend(core::iter::repeat(gi / div).take(width));
                }
                send(*a, d);
            }
            Op::Softmax(a) => {
                let width = *self.shape(*a).last().unwrap_or(&1);
                let mut d = vec![0f32; g.len()];
                for ((yr, gr), dr) in y.chunks(width).zip(g.chunks(width)).zip(d.chunks_mut(width)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(&y, &g)| y as f64 * g as f64).sum();
                    for ((o, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = (y as f64 * (g as f64 - dot)) as f32;
                    }
                }
                send(*a, d);
            }
            Op::LogSoftmax(a) => {
                let width = *self.shape(*a).last().unwrap_or(&1);
                let mut d = vec![0f32; g.len()];
                for ((yr, gr), dr) in y.chunks(width).zip(g.chunks(width)).zip(d.chunks_mut(width)) {
                    let total: f64 = gr.iter().map(|&g| g as f64).sum();
                    for ((o, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = (g as f64 - libm::exp(y as f64) * total) as f32;
                    }
                }
                send(*a, d);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].needs_grad {
                    send(*a, kernels::mm_nt(g, self.data(*b), m, n, k));
                }
                if self.nodes[b.0].needs_grad {
                    send(*b, kernels::mm_tn(self.data(*a), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                let mut d = vec![0f32; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                send(*a, d);
            }
            Op::Concat0(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    send(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Slice {
                src,
                axis_len,
                inner,
                start,
            } => {
                let total = self.nodes[src.0].value.numel();
                let len = y.len() / (total / (axis_len * inner)) / inner;
                let mut d = vec![0f32; total];
                for (o, chunk) in g.chunks(len * inner).enumerate() {
                    let base = (o * axis_len + start) * inner;
                    d[base..base + len * inner].copy_from_slice(chunk);
                }
                send(*src, d);
            }
            Op::Embed { table, indices } => {
                let s = self.shape(*table);
                let d_width = s[1];
                let mut acc = vec![0f64; s[0] * d_width];
                for (row, &idx) in indices.iter().enumerate() {
                    for j in 0..d_width {
                        acc[idx * d_width + j] += g[row * d_width + j] as f64;
                    }
                }
                send(*table, acc.into_iter().map(|v| v as f32).collect());
            }
            Op::GatherLast { src, indices } => {
                let c = self.shape(*src)[1];
                let mut d = vec![0f32; indices.len() * c];
                for (r, &i) in indices.iter().enumerate() {
                    d[r * c + i] = g[r];
                }
                send(*src, d);
            }
            Op::Conv { x, w, geom } => {
                let (cin, cout) = (self.shape(*x)[0], self.shape(*w)[0]);
                let p = cin * geom.patch();
                let q = geom.out_cells();
                if self.nodes[w.0].needs_grad {
                    let cols = kernels::im2col(self.data(*x), cin, geom);
                    send(*w, kernels::mm_nt(g, &cols, cout, q, p));
                }
                if self.nodes[x.0].needs_grad {
                    let dcols = kernels::mm_tn(self.data(*w), g, cout, p, q);
                    send(*x, kernels::col2im(&dcols, cin, geom));
                }
            }
            Op::ConvTranspose { x, w, geom } => {
                let (cin, cout) = (self.shape(*x)[0], self.shape(*w)[1]);
                let p = cout * geom.patch();
                let q = geom.out_cells();
                let dcols = kernels::im2col(g, cout, geom);
                if self.nodes[w.0].needs_grad {
                    send(*w, kernels::mm_nt(self.data(*x), &dcols, cin, q, p));
                }
                if self.nodes[x.0].needs_grad {
                    send(*x, kernels::mm(self.data(*w), &dcols, cin, p, q));
                }
            }
            Op::CausalMask(a) => {
                let n = self.shape(*a)[0];
                let mut d = g.to_vec();
                for i in 0..n {
                    for v in &mut d[i * n + i + 1..(i + 1) * n] {
                        *v = 0.0;
                    }
                }
                send(*a, d);
            }
            Op::StraightThrough(enc) => send(*enc, g.to_vec()),
        }
    }
}
