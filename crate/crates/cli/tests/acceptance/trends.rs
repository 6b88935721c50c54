use std::path::Path;
use std::thread;

use zenfoley::config::RunConfig;
use zenfoley::core::nn::Adam;
use zenfoley::core::snail::{SnailExample, SnailModel};
use zenfoley::formats::read_codes;
use zenfoley::pipeline::{self, Layout, VqSummary};

use crate::fd::rng;
use crate::{corpus, ctx, ensure, Failure, Outcome};

const CLIPS: usize = 64;
const SNAIL_STEPS: u64 = 300;
const OVERFIT_STEPS: u64 = 400;

fn train_vq(cfg: &RunConfig, out: &Path) -> Result<VqSummary, String> {
    ctx(pipeline::split(cfg, 0, out), "split")?;
    ctx(pipeline::prepare(cfg, 0, out), "prepare")?;
    ctx(pipeline::train_vqvae(cfg, 0, out, None), "train vq-vae")
}

/// Trains a fresh prior on one grid until greedy decoding returns it.
fn overfit(cfg: &RunConfig, out: &Path) -> Result<u64, String> {
    let (grid, label) = ctx(read_codes(&Layout::new(out).codes(0)), "read codes")?;
    let mut m = ctx(SnailModel::new(cfg.snail.clone(), &mut rng(5)), "prior")?;
    let mut opt = Adam::new(&m.params);
    let batch = [SnailExample { id: 0, codes: &grid, label }];
    for step in 0..OVERFIT_STEPS {
        ctx(m.train_step(&mut opt, &batch, 3e-3, Some(1.0), step), "overfit step")?;
        if (step + 1) % 25 == 0 && ctx(m.greedy(label), "greedy")? == grid {
            return Ok(step + 1);
        }
    }
    let got = ctx(m.greedy(label), "greedy")?;
    let wrong = got.raster().iter().zip(grid.raster()).filter(|(a, b)| a != b).count();
    Err(format!("greedy decode differs from the overfit grid at {wrong} cells after {OVERFIT_STEPS} steps"))
}

pub fn run() -> Outcome {
    let root = ctx(tempfile::tempdir(), "temp dir")?;
    let data = root.path().join("corpus");
    std::fs::create_dir_all(&data).unwrap();
    let manifest = corpus::write(&data, CLIPS, 9);

    let load = |name: &str, extra: &str| -> Result<(RunConfig, std::path::PathBuf), String> {
        let dir = root.path().join(name);
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = ctx(RunConfig::load(&corpus::config(&dir, &manifest, extra)), "config")?;
        Ok((cfg, dir.join("work")))
    };
    let (cond, cond_dir) = load("conditioned", &format!("snail.max_steps = {SNAIL_STEPS}\n"))?;
    let (uncond, uncond_dir) = load("unconditioned", "vq.class_weight = 0\n")?;
    ensure(cond.vq_train.max_steps == 200 && uncond.vq_train.max_steps == 200, || {
        "VQ-VAE runs are not 200 steps".into()
    })?;

    let (c, u) = thread::scope(|s| {
        let other = s.spawn(|| train_vq(&uncond, &uncond_dir));
        let c = train_vq(&cond, &cond_dir);
        (c, other.join().unwrap_or_else(|_| Err("unconditioned run panicked".into())))
    });
    let (c, u) = (c?, u?);

    ctx(pipeline::extract_codes(&cond, 0, &cond_dir), "extract codes")?;
    let (prior, overfit_steps) = thread::scope(|s| {
        let o = s.spawn(|| overfit(&cond, &cond_dir));
        let p = ctx(pipeline::train_snail(&cond, 0, &cond_dir, None), "train prior");
        (p, o.join().unwrap_or_else(|_| Err("overfit run panicked".into())))
    });
    let prior = prior?;

    let recon_drop = 1.0 - c.final_loss.reconstruction / c.initial.reconstruction;
    let nll_drop = 1.0 - prior.final_nll / prior.initial_nll;
    let mut failures = Vec::new();
    // The latent-diff ordering is not reproduced at this scale: across seeds
    // the two variants land within noise of each other, either way round.
    let mut known = Vec::new();
    if !(recon_drop > 0.5) {
        failures.push(format!(
            "reconstruction MSE fell {:.1}% ({:.4} -> {:.4})",
            100.0 * recon_drop,
            c.initial.reconstruction,
            c.final_loss.reconstruction
        ));
    }
    if !(c.final_loss.latent_diff < u.final_loss.latent_diff) {
        known.push(format!(
            "conditioned latent diff {:.5} not below unconditioned {:.5}",
            c.final_loss.latent_diff, u.final_loss.latent_diff
        ));
    }
    if !(nll_drop > 0.3) {
        failures.push(format!(
            "prior NLL fell {:.1}% ({:.3} -> {:.3})",
            100.0 * nll_drop,
            prior.initial_nll,
            prior.final_nll
        ));
    }
    let overfit_steps = overfit_steps.unwrap_or_else(|e| {
        failures.push(e);
        0
    });
    let summary = format!(
        "recon MSE -{:.1}% ({:.4} -> {:.4}); latent diff {:.5} conditioned vs {:.5} unconditioned; \
         NLL -{:.1}% ({:.3} -> {:.3}) over {} steps; greedy reproduced the overfit grid after {overfit_steps} steps",
        100.0 * recon_drop,
        c.initial.reconstruction,
        c.final_loss.reconstruction,
        c.final_loss.latent_diff,
        u.final_loss.latent_diff,
        100.0 * nll_drop,
        prior.initial_nll,
        prior.final_nll,
        prior.steps,
    );
    if failures.is_empty() && known.is_empty() {
        return Ok(summary);
    }
    let all_known = failures.is_empty();
    failures.extend(known);
    Err(Failure {
        reason: format!("{}; measured: {summary}", failures.join("; ")),
        known: all_known,
    })
}
