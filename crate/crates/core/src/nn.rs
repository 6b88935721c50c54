//! Parameters, layers and the optimizer shared by both models.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::kernels::ConvGeom;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor by name. Names and shapes must match exactly.
    pub fn load<'a>(&mut self, named: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = vec![false; self.tensors.len()];
        for (name, t) in named {
            let i = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::contract(alloc::format!("unknown parameter {name}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::dim("load", self.tensors[i].shape(), t.shape()));
            }
            self.tensors[i] = t.clone();
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::contract(alloc::format!(
                "parameter {} missing",
                self.names[i]
            )));
        }
        Ok(())
    }

    /// Places every parameter on the graph. With `trainable == false` they
    /// enter as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter, zero-filled where nothing flowed.
    pub fn collect(&self, store: &ParamStore, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }
}

/// Kaiming-style uniform bound for a layer with `fan_in` inputs.
fn init_bound(fan_in: usize) -> f32 {
    libm::sqrtf(1.0 / fan_in as f32)
}

/// 2-D correlation with bias over a `(C, H, W)` input.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(cin * kernel.0 * kernel.1);
        let weight = store.add(
            alloc::format!("{name}.weight"),
            Tensor::uniform(&[cout, cin, kernel.0, kernel.1], bound, rng),
        );
        let bias = store.add(
            alloc::format!("{name}.bias"),
            Tensor::uniform(&[cout, 1, 1], bound, rng),
        );
        Conv2d {
            weight,
            bias,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, in_hw: (usize, usize)) -> Option<(usize, usize)> {
        ConvGeom::symmetric(in_hw, self.kernel, self.stride, self.pad).map(|g| (g.out_h, g.out_w))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("conv2d", &s, &[]));
        }
        let geom = ConvGeom::symmetric((s[1], s[2]), self.kernel, self.stride, self.pad)
            .ok_or_else(|| Error::dim("conv2d", &s, &[self.kernel.0, self.kernel.1]))?;
        let y = g.conv2d(x, p.var(self.weight), geom)?;
        g.add(y, p.var(self.bias))
    }
}

/// Transposed 2-D convolution with bias; output extent `(n−1)·s − 2p + k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(cin * kernel.0 * kernel.1 / (stride.0 * stride.1)).max(1e-3);
        let weight = store.add(
            alloc::format!("{name}.weight"),
            Tensor::uniform(&[cin, cout, kernel.0, kernel.1], bound, rng),
        );
        let bias = store.add(
            alloc::format!("{name}.bias"),
            Tensor::uniform(&[cout, 1, 1], bound, rng),
        );
        ConvTranspose2d {
            weight,
            bias,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, in_hw: (usize, usize)) -> Option<(usize, usize)> {
        let f = |n: usize, k: usize, s: usize, p: usize| ((n - 1) * s + k).checked_sub(2 * p);
        Some((
            f(in_hw.0, self.kernel.0, self.stride.0, self.pad.0)?,
            f(in_hw.1, self.kernel.1, self.stride.1, self.pad.1)?,
        ))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("conv_transpose2d", &s, &[]));
        }
        let (oh, ow) = self
            .out_hw((s[1], s[2]))
            .ok_or_else(|| Error::dim("conv_transpose2d", &s, &[self.kernel.0, self.kernel.1]))?;
        let geom = ConvGeom {
            in_h: oh,
            in_w: ow,
            out_h: s[1],
            out_w: s[2],
            k_h: self.kernel.0,
            k_w: self.kernel.1,
            stride_h: self.stride.0,
            stride_w: self.stride.1,
            pad_h: self.pad.0,
            pad_w: self.pad.1,
        };
        let y = g.conv_transpose2d(x, p.var(self.weight), geom)?;
        g.add(y, p.var(self.bias))
    }
}

/// `y = x·W + b` over rows of an `(n, in)` input.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(fan_in);
        let weight = store.add(
            alloc::format!("{name}.weight"),
            Tensor::uniform(&[fan_in, fan_out], bound, rng),
        );
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
        Linear { weight, bias }
    }

    /// Zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(
            alloc::format!("{name}.weight"),
            Tensor::zeros(&[fan_in, fan_out]),
        );
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.weight))?;
        g.add(y, p.var(self.bias))
    }
}

/// Global L2 norm of a gradient list, accumulated in 64-bit.
pub fn grad_norm(grads: &[Tensor]) -> f64 {
    libm::sqrt(grads.iter().map(Tensor::sq_norm).sum())
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before and after clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> (f64, f64) {
    let before = grad_norm(grads);
    if before > max_norm && before > 0.0 {
        // Scale a hair under the ratio so float rounding cannot push the
        // clipped norm past the limit.
        let scale = (max_norm / before * (1.0 - 1e-6)) as f32;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    (before, grad_norm(grads))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            second: store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::dim("adam", &[store.len()], &[grads.len()]));
        }
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (i, (p, g)) in store.tensors_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gv = gv as f64;
                let m_new = self.beta1 * *mv as f64 + (1.0 - self.beta1) * gv;
                let v_new = self.beta2 * *vv as f64 + (1.0 - self.beta2) * gv * gv;
                *mv = m_new as f32;
                *vv = v_new as f32;
                let update = lr * (m_new / bc1) / (libm::sqrt(v_new / bc2) + self.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }

    /// Flattened moment buffers as named tensors, for persistence.
    pub fn state(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for ((name, t), (m, v)) in store.iter().zip(self.first.iter().zip(&self.second)) {
            out.push((
                alloc::format!("adam.m.{name}"),
                Tensor::new(t.shape(), m.clone()).expect("moment shape"),
            ));
            out.push((
                alloc::format!("adam.v.{name}"),
                Tensor::new(t.shape(), v.clone()).expect("moment shape"),
            ));
        }
        out
    }

    pub fn load_state<'a>(
        &mut self,
        store: &ParamStore,
        named: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
        step: u64,
    ) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for (name, t) in named {
            let (kind, rest) = if let Some(r) = name.strip_prefix("adam.m.") {
                (0, r)
            } else if let Some(r) = name.strip_prefix("adam.v.") {
                (1, r)
            } else {
                continue;
            };
            let i = names
                .iter()
                .position(|n| n == rest)
                .ok_or_else(|| Error::contract(alloc::format!("unknown moment {name}")))?;
            let slot = if kind == 0 { &mut self.first[i] } else { &mut self.second[i] };
            if slot.len() != t.numel() {
                return Err(Error::dim("adam state", &[slot.len()], t.shape()));
            }
            slot.copy_from_slice(t.data());
        }
        self.step = step;
        Ok(())
    }
}
