use rand::Rng;
use zenfoley::core::graph::Graph;
use zenfoley::core::nn::ParamStore;
use zenfoley::core::snail::{
    causal_conv, causal_conv_transpose, AttentionStats, SnailConfig, SnailModel, ZenAttention,
};
use zenfoley::core::{CategoryLabel, Tensor};

use crate::fd::{fd_column, rng, uniform};
use crate::Outcome;

const ZERO: f64 = 1e-7;

/// `jac[p][t]`: `|∂out[t]/∂in[p]|` summed over input and output channels, for
/// maps from `(C, 1, n)` to `(C', 1, m)`.
fn jacobian(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> Vec<Vec<f64>> {
    let (c, n) = (x.shape()[0], x.shape()[2]);
    let shape = f(x).shape().to_vec();
    let (oc, on) = (shape[0], shape[shape.len() - 1]);
    (0..n)
        .map(|p| {
            let mut col = vec![0.0; on];
            for ch in 0..c {
                let d = fd_column(x, ch * n + p, &f);
                for o in 0..oc {
                    for (t, v) in col.iter_mut().enumerate() {
                        *v += d[o * on + t].abs();
                    }
                }
            }
            col
        })
        .collect()
}

#[derive(Default)]
struct Tally {
    forbidden: usize,
    worst: f64,
}

impl Tally {
    fn certify(
        &mut self,
        jac: &[Vec<f64>],
        forbidden: impl Fn(usize, usize) -> bool,
        what: &str,
    ) -> Result<(), String> {
        let mut live = false;
        for (p, col) in jac.iter().enumerate() {
            for (t, &d) in col.iter().enumerate() {
                if forbidden(p, t) {
                    self.forbidden += 1;
                    self.worst = self.worst.max(d);
                    if d >= ZERO {
                        return Err(format!("{what}: |∂out[{t}]/∂in[{p}]| = {d:e}"));
                    }
                } else if d > 1e-3 {
                    live = true;
                }
            }
        }
        // A Jacobian that is zero everywhere would certify trivially.
        crate::ensure(live, || format!("{what}: Jacobian is identically zero"))
    }
}

pub fn run() -> Outcome {
    let mut tally = Tally::default();
    for seed in 0..5u64 {
        let mut r = rng(seed);
        for stride in 1..=4 {
            let (kernel, n) = (r.gen_range(1..=4), r.gen_range(6..14));
            let x = uniform(&[2, 1, n], -1.0, 1.0, &mut r);
            let w = uniform(&[3, 2, 1, kernel], -1.0, 1.0, &mut r);
            let jac = jacobian(&x, |x| {
                let mut g = Graph::new();
                let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
                let y = causal_conv(&mut g, xv, wv, stride).unwrap();
                g.value(y).clone()
            });
            tally.certify(&jac, |p, u| p > u * stride, &format!("causal_conv S={stride} seed {seed}"))?;

            let (kernel, m) = (r.gen_range(1..=5), r.gen_range(2..6));
            let x = uniform(&[2, 1, m], -1.0, 1.0, &mut r);
            let w = uniform(&[2, 3, 1, kernel], -1.0, 1.0, &mut r);
            let jac = jacobian(&x, |x| {
                let mut g = Graph::new();
                let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
                let y = causal_conv_transpose(&mut g, xv, wv, stride, m * stride).unwrap();
                g.value(y).clone()
            });
            tally.certify(
                &jac,
                |u, t| u > t / stride,
                &format!("causal_conv_transpose S={stride} seed {seed}"),
            )?;
        }

        for stride in [1, 4] {
            let mut r = rng(seed + 20);
            let mut store = ParamStore::new();
            let zen = ZenAttention::new(&mut store, "zen", 4, stride, 2, &mut r).unwrap();
            let x = uniform(&[4, 1, 13], -1.0, 1.0, &mut r);
            let jac = jacobian(&x, |x| {
                let mut g = Graph::new();
                let p = store.bind(&mut g, false);
                let xv = g.input(x.clone());
                let y = zen.forward(&mut g, &p, xv, &mut AttentionStats::default()).unwrap();
                g.value(y).clone()
            });
            tally.certify(&jac, |a, b| a > b, &format!("zen attention S={stride} seed {seed}"))?;
            crate::ensure(jac[0][12] > 1e-4, || {
                format!("zen attention S={stride}: attention path never reaches the last output")
            })?;

            let cfg = SnailConfig {
                codebook_size: 5,
                grid_rows: 3,
                grid_cols: 4,
                channels: 4,
                blocks: 2,
                kernel: 2,
                zen_stride: stride,
                heads: 2,
            };
            let mut r = rng(seed + 30);
            let mut m = SnailModel::new(cfg, &mut r).unwrap();
            for t in m.params.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
            }
            let n = m.config.seq_len();
            let label = CategoryLabel::new(seed as usize).unwrap();
            // Column j of the embedding carries token j − 1; column 0 is the start token.
            let h = uniform(&[4, 1, n], -1.0, 1.0, &mut r);
            let jac = jacobian(&h, |h| {
                let mut g = Graph::new();
                let p = m.bind(&mut g, false);
                let hv = g.input(h.clone());
                let l = m
                    .logits_from_embedding(&mut g, &p, hv, label, &mut AttentionStats::default())
                    .unwrap();
                let t = g.transpose(l).unwrap();
                let t = g.reshape(t, &[5, 1, n]).unwrap();
                g.value(t).clone()
            });
            tally.certify(&jac, |j, i| j > i, &format!("snail logits S={stride} seed {seed}"))?;
        }
    }
    Ok(format!(
        "{} forbidden Jacobian entries, max {:.1e} < {ZERO:e}",
        tally.forbidden, tally.worst
    ))
}
