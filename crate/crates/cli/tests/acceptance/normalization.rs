use rand::Rng;
use zenfoley::core::snail::{SnailConfig, SnailModel};
use zenfoley::core::{CategoryLabel, CodeGrid};

use crate::fd::rng;
use crate::{ensure, Outcome};

pub fn run() -> Outcome {
    let mut extremes = (f64::INFINITY, f64::NEG_INFINITY);
    let mut models = 0;
    for seed in 0..5u64 {
        for stride in [1, 4] {
            let cfg = SnailConfig {
                codebook_size: 3,
                grid_rows: 2,
                grid_cols: 2,
                channels: 4,
                blocks: 2,
                kernel: 2,
                zen_stride: stride,
                heads: 2,
            };
            let mut r = rng(seed);
            let mut m = SnailModel::new(cfg, &mut r).unwrap();
            // Away from the uniform start so the check is not trivial.
            for t in m.params.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.7..0.7));
            }
            let label = CategoryLabel::new(seed as usize).unwrap();
            let mut total = 0.0;
            let mut peak = 0.0f64;
            for code in 0..81usize {
                let tokens: Vec<usize> = (0..4).map(|i| code / 3usize.pow(i) % 3).collect();
                let grid = CodeGrid::new(2, 2, tokens).unwrap();
                let nll = m.nll(&grid, label).map_err(|e| e.to_string())?;
                let p = (-4.0 * nll).exp();
                peak = peak.max(p);
                total += p;
            }
            ensure((0.9999..=1.0001).contains(&total), || {
                format!("seed {seed} S={stride}: mass {total}")
            })?;
            ensure(peak > 1.5 / 81.0, || format!("seed {seed} S={stride}: distribution is uniform"))?;
            extremes = (extremes.0.min(total), extremes.1.max(total));
            models += 1;
        }
    }
    Ok(format!(
        "{models} models, total mass over 81 grids in [{:.7}, {:.7}]",
        extremes.0, extremes.1
    ))
}
