#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zenfoley_core::graph::{Graph, Var};
use zenfoley_core::nn::{Bound, ParamStore};
use zenfoley_core::{Result, Tensor};

pub const FD_STEP: f32 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Relative error between backprop and central differences for the gradient
/// with respect to every tensor in `store` and `inputs`.
///
/// The scalar probed is `Σ r·out` for a fixed random cotangent `r`, summed in
/// 64-bit. The error is `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)` over the gradient of all
/// leaves taken together: f32 storage leaves roughly 1e-4 of absolute noise
/// in a difference quotient at this step, so leaves whose true gradient is
/// zero or tiny cannot be judged on their own scale.
pub fn grad_check<F>(store: &ParamStore, inputs: &[Tensor], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph, &Bound, &[Var]) -> Result<Var>,
{
    let run = |store: &ParamStore, inputs: &[Tensor]| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let xs: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &p, &xs).expect("forward");
        (g, p, xs, out)
    };

    let (g, p, xs, out) = run(store, inputs);
    let mut r = rng(seed ^ 0x5eed);
    let cot = uniform(g.shape(out), -1.0, 1.0, &mut r);
    let grads = g.backward_with(out, &cot).expect("backward");
    let mut analytic = p.collect(store, &grads);
    analytic.extend(xs.iter().zip(inputs).map(|(&x, t)| grads.get_or_zeros(x, t.shape())));

    let probe = |store: &ParamStore, inputs: &[Tensor]| -> f64 {
        let (g, _, _, out) = run(store, inputs);
        g.value(out)
            .data()
            .iter()
            .zip(cot.data())
            .map(|(&o, &c)| o as f64 * c as f64)
            .sum()
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut col = vec![0.0f64; a.numel()];
        for (j, slot) in col.iter_mut().enumerate() {
            let mut s = store.clone();
            let mut xs = inputs.to_vec();
            let base = *entry(&mut s, &mut xs, i, j);
            let (up, down) = (base + FD_STEP, base - FD_STEP);
            *entry(&mut s, &mut xs, i, j) = up;
            let f_up = probe(&s, &xs);
            *entry(&mut s, &mut xs, i, j) = down;
            let f_down = probe(&s, &xs);
            *slot = (f_up - f_down) / (up as f64 - down as f64);
        }
        numeric.push(col);
    }

    let pairs = || {
        analytic
            .iter()
            .zip(&numeric)
            .flat_map(|(a, n)| a.data().iter().map(|&v| v as f64).zip(n.iter().copied()))
    };
    let scale = pairs().map(|(a, n)| a.abs().max(n.abs())).fold(0.0, f64::max);
    let err = pairs().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let rel = if scale == 0.0 { 0.0 } else { err / scale };
    if rel >= FD_TOLERANCE {
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let name = store.iter().nth(i).map_or("input", |(n, _)| n);
            let (k, e) = a
                .data()
                .iter()
                .zip(n)
                .map(|(&x, &y)| (x as f64 - y).abs())
                .enumerate()
                .fold((0, 0.0), |b, (k, e)| if e > b.1 { (k, e) } else { b });
            eprintln!(
                "tensor {i} ({name}): abs err {e:e} at {k}: analytic {} numeric {}",
                a.data()[k],
                n[k]
            );
        }
    }
    rel
}

/// Element `j` of tensor `i`, counting store tensors first.
fn entry<'a>(s: &'a mut ParamStore, xs: &'a mut [Tensor], i: usize, j: usize) -> &'a mut f32 {
    let n = s.len();
    if i < n {
        &mut s.tensors_mut()[i].data_mut()[j]
    } else {
        &mut xs[i - n].data_mut()[j]
    }
}

/// `out[t]` as a function of one perturbed input entry, by central
/// differences.
pub fn fd_column<F>(input: &Tensor, index: usize, f: F) -> Vec<f64>
where
    F: Fn(&Tensor) -> Tensor,
{
    let mut up = input.clone();
    up.data_mut()[index] += FD_STEP;
    let mut down = input.clone();
    down.data_mut()[index] -= FD_STEP;
    let (a, b) = (f(&up), f(&down));
    let h = up.data()[index] as f64 - down.data()[index] as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64) / h)
        .collect()
}
