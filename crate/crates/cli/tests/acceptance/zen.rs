use zenfoley::core::graph::Graph;
use zenfoley::core::nn::ParamStore;
use zenfoley::core::snail::{AttentionStats, ZenAttention};
use zenfoley::core::Tensor;

use crate::fd::rng;
use crate::{ensure, Outcome};

fn entries(n: usize, stride: usize, heads: usize) -> Result<AttentionStats, String> {
    let mut store = ParamStore::new();
    let zen = ZenAttention::new(&mut store, "z", 4, stride, heads, &mut rng(1)).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.input(Tensor::zeros(&[4, 1, n]));
    let mut stats = AttentionStats::default();
    zen.forward(&mut g, &p, x, &mut stats).map_err(|e| e.to_string())?;
    Ok(stats)
}

pub fn run() -> Outcome {
    let mut seen = Vec::new();
    for n in [16, 64, 128, 300] {
        for heads in [1, 2] {
            let dense = entries(n, 1, heads)?;
            let zen = entries(n, 4, heads)?;
            ensure(dense.entries == (n * n * heads) as u64, || {
                format!("N={n}: S=1 counted {} entries", dense.entries)
            })?;
            ensure(dense.entries == 16 * zen.entries, || {
                format!("N={n} heads={heads}: S=1 {} vs S=4 {}", dense.entries, zen.entries)
            })?;
            seen.push(format!("{}/{}", zen.entries, dense.entries));
        }
    }
    Ok(format!("S=4/S=1 entries {} (exactly 1/16)", seen.join(", ")))
}
