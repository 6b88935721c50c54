//! Central-difference oracles shared by the gradient and causality checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zenfoley::core::graph::{Graph, Var};
use zenfoley::core::nn::{Bound, ParamStore};
use zenfoley::core::{Result, Tensor};

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Max relative error between backprop and central differences, over the
/// gradient of `Σ c·out` (fixed random cotangent `c`) with respect to every
/// tensor in `store` and `inputs` taken together.
///
/// The error is `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`: f32 storage leaves about 1e-4
/// of absolute noise in a difference quotient, so individual near-zero
/// entries cannot be judged on their own scale.
pub fn grad_error<F>(store: &ParamStore, inputs: &[Tensor], seed: u64, build: F) -> f64
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
    let cot = uniform(g.shape(out), -1.0, 1.0, &mut rng(seed ^ 0x5eed));
    let grads = g.backward_with(out, &cot).expect("backward");
    let mut analytic = p.collect(store, &grads);
    analytic.extend(xs.iter().zip(inputs).map(|(&x, t)| grads.get_or_zeros(x, t.shape())));

    let probe = |store: &ParamStore, inputs: &[Tensor]| -> f64 {
        let (g, _, _, out) = run(store, inputs);
        g.value(out).data().iter().zip(cot.data()).map(|(&o, &c)| o as f64 * c as f64).sum()
    };

    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..a.numel() {
            let mut s = store.clone();
            let mut xs = inputs.to_vec();
            let base = *entry(&mut s, &mut xs, i, j);
            *entry(&mut s, &mut xs, i, j) = base + STEP;
            let up = probe(&s, &xs);
            *entry(&mut s, &mut xs, i, j) = base - STEP;
            let down = probe(&s, &xs);
            let h = (base + STEP) as f64 - (base - STEP) as f64;
            let n = (up - down) / h;
            let a = a.data()[j] as f64;
            err = err.max((a - n).abs());
            scale = scale.max(a.abs()).max(n.abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        err / scale
    }
}

fn entry<'a>(s: &'a mut ParamStore, xs: &'a mut [Tensor], i: usize, j: usize) -> &'a mut f32 {
    let n = s.len();
    if i < n {
        &mut s.tensors_mut()[i].data_mut()[j]
    } else {
        &mut xs[i - n].data_mut()[j]
    }
}

/// `∂out/∂input[index]` by central differences.
pub fn fd_column(input: &Tensor, index: usize, f: impl Fn(&Tensor) -> Tensor) -> Vec<f64> {
    let mut up = input.clone();
    up.data_mut()[index] += STEP;
    let mut down = input.clone();
    down.data_mut()[index] -= STEP;
    let (a, b) = (f(&up), f(&down));
    let h = up.data()[index] as f64 - down.data()[index] as f64;
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64) / h).collect()
}
