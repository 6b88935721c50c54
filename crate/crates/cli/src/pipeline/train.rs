use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use zenfoley_core::frontend::{mask_augment, CEmbed};
use zenfoley_core::nn::Adam;
use zenfoley_core::schedule::CyclicLr;
use zenfoley_core::snail::{SnailExample, SnailModel};
use zenfoley_core::split::Split;
use zenfoley_core::vqvae::{VqExample, VqLoss, VqVae};
use zenfoley_core::{CategoryLabel, CodeGrid, Error, Tensor};

use super::data::{corpus_stats, load_cembed};
use super::{checkpoint_path, final_checkpoint, stream_rng, tagged_manifest, Layout, Stream};
use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, TrainSettings};
use crate::error::{PipelineError, Result};
use crate::formats::{read_codes, write_bytes, write_codes};

/// Clips used to measure losses before and after training.
const PROBE_CLIPS: usize = 32;
/// Encoder outputs drawn from at most this many clips when reseeding.
const RESEED_CLIPS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqLogLine {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub total: f64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub class_ce: f64,
    pub latent_diff: f64,
    /// Gradient norm after clipping.
    pub grad_norm: f64,
    pub raw_grad_norm: f64,
    pub codes_used: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSnapshot {
    pub total: f64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub class_ce: f64,
    pub latent_diff: f64,
}

impl From<VqLoss> for LossSnapshot {
    fn from(l: VqLoss) -> Self {
        LossSnapshot {
            total: l.total,
            reconstruction: l.reconstruction,
            codebook: l.codebook,
            commitment: l.commitment,
            class_ce: l.class_ce,
            latent_diff: l.latent_diff,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqSummary {
    pub steps: u64,
    pub resumed_from: u64,
    /// Probe-set losses of the freshly initialised model.
    pub initial: LossSnapshot,
    pub final_loss: LossSnapshot,
    pub probe_clips: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnailLogLine {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub nll: f64,
    pub grad_norm: f64,
    pub raw_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnailSummary {
    pub steps: u64,
    pub resumed_from: u64,
    pub initial_nll: f64,
    pub final_nll: f64,
    pub probe_grids: usize,
}

/// Step budget and batch boundaries for one training run.
struct Plan {
    n: usize,
    batch: usize,
    per_epoch: u64,
    total: u64,
}

impl Plan {
    fn new(n: usize, t: &TrainSettings) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("no training clips".into()).into());
        }
        let per_epoch = n.div_ceil(t.batch_size) as u64;
        let mut total = t.epochs * per_epoch;
        if t.max_steps > 0 {
            total = total.min(t.max_steps);
        }
        Ok(Plan {
            n,
            batch: t.batch_size,
            per_epoch,
            total,
        })
    }

    fn epoch(&self, step: u64) -> u64 {
        step / self.per_epoch
    }

    fn ends_epoch(&self, step: u64) -> bool {
        step % self.per_epoch == self.per_epoch - 1
    }

    /// Item indices for `step`: the epoch's seeded permutation, chunked.
    fn batch(&self, seed: u64, step: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[self.epoch(step)]));
        let pos = (step % self.per_epoch) as usize;
        order[pos * self.batch..((pos + 1) * self.batch).min(self.n)].to_vec()
    }
}

/// Opens the log for appending, dropping any lines past `keep_through` so a
/// resumed run does not duplicate steps.
fn open_log(path: &Path, keep_through: u64) -> Result<fs::File> {
    let mut kept = String::new();
    if keep_through > 0 {
        if let Ok(text) = fs::read_to_string(path) {
            for line in text.lines() {
                let step = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("step").and_then(|s| s.as_u64()));
                if step.is_some_and(|s| s <= keep_through) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    write_bytes(path, kept.as_bytes())?;
    fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| PipelineError::io(path, e))
}

fn log_line<T: Serialize>(file: &mut fs::File, path: &Path, line: &T) -> Result<()> {
    let mut s = serde_json::to_string(line).expect("log records serialize");
    s.push('\n');
    file.write_all(s.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("summaries serialize");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

struct Clip {
    id: usize,
    label: CategoryLabel,
    cembed: CEmbed,
}

fn train_clips(layout: &Layout, cfg: &RunConfig) -> Result<Vec<Clip>> {
    let manifest = tagged_manifest(layout)?;
    let stats = corpus_stats(layout)?;
    manifest
        .with_split(Split::Train)
        .map(|(i, e)| {
            Ok(Clip {
                id: i,
                label: e.label,
                cembed: load_cembed(layout, cfg, &stats, i)?,
            })
        })
        .collect()
}

fn probe_loss(model: &VqVae, clips: &[Clip], batch: usize) -> Result<VqLoss> {
    let probe = &clips[..clips.len().min(PROBE_CLIPS)];
    let mut sum = VqLoss::default();
    for chunk in probe.chunks(batch) {
        let ex: Vec<VqExample> = chunk
            .iter()
            .map(|c| VqExample {
                id: c.id,
                input: &c.cembed.values,
                label: c.label,
            })
            .collect();
        let l = model.evaluate(&ex)?;
        let w = chunk.len() as f64;
        sum.total += w * l.total;
        sum.reconstruction += w * l.reconstruction;
        sum.codebook += w * l.codebook;
        sum.commitment += w * l.commitment;
        sum.class_ce += w * l.class_ce;
        sum.latent_diff += w * l.latent_diff;
    }
    let n = probe.len() as f64;
    Ok(VqLoss {
        total: sum.total / n,
        reconstruction: sum.reconstruction / n,
        codebook: sum.codebook / n,
        commitment: sum.commitment / n,
        class_ce: sum.class_ce / n,
        latent_diff: sum.latent_diff / n,
    })
}

fn fresh_vq(cfg: &RunConfig, seed: u64) -> Result<VqVae> {
    Ok(VqVae::new(cfg.vq.clone(), &mut stream_rng(seed, Stream::VqInit, &[]))?)
}

/// Trains the VQ-VAE on the training split, optionally continuing from a
/// checkpoint. Writes `log.jsonl`, periodic and final checkpoints and
/// `summary.json` under `vqvae/`.
pub fn train_vqvae(cfg: &RunConfig, seed: u64, out: &Path, resume: Option<&Path>) -> Result<VqSummary> {
    let layout = Layout::new(out);
    let dir = layout.vq_dir();
    let clips = train_clips(&layout, cfg)?;
    let plan = Plan::new(clips.len(), &cfg.vq_train)?;
    let hash = cfg.vq_hash();

    let mut model = fresh_vq(cfg, seed)?;
    let initial = probe_loss(&model, &clips, plan.batch)?;
    let mut opt = Adam::new(&model.params);
    let mut start = 0;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        ck.expect_hash(hash, "vq-vae")?;
        opt = ck.restore(&mut model.params)?;
        if ck.counters.len() != model.usage.len() {
            return Err(PipelineError::Versioning(format!(
                "checkpoint tracks {} codewords, model has {}",
                ck.counters.len(),
                model.usage.len()
            )));
        }
        model.usage.copy_from_slice(&ck.counters);
        start = ck.step;
    }

    let log_path = dir.join("log.jsonl");
    let mut log = open_log(&log_path, start)?;
    let max_norm = cfg.vq_train.max_grad_norm;
    for step in start..plan.total {
        let items = plan.batch(seed, step);
        let masked: Vec<Tensor> = items
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                if cfg.mask.count == 0 {
                    return Ok(clips[i].cembed.values.clone());
                }
                let spec = cfg.mask_spec(super::derive_seed(seed, Stream::Mask, &[step, slot as u64]));
                Ok(mask_augment(&clips[i].cembed, &spec)?.values)
            })
            .collect::<Result<_>>()?;
        let batch: Vec<VqExample> = items
            .iter()
            .zip(&masked)
            .map(|(&i, x)| VqExample {
                id: clips[i].id,
                input: x,
                label: clips[i].label,
            })
            .collect();
        let s = model.train_step(&mut opt, &batch, cfg.vq_lr, Some(max_norm), step)?;
        let done = step + 1;
        if done % cfg.log_interval == 0 {
            log_line(
                &mut log,
                &log_path,
                &VqLogLine {
                    step: done,
                    epoch: plan.epoch(step),
                    lr: cfg.vq_lr,
                    total: s.loss.total,
                    reconstruction: s.loss.reconstruction,
                    codebook: s.loss.codebook,
                    commitment: s.loss.commitment,
                    class_ce: s.loss.class_ce,
                    latent_diff: s.loss.latent_diff,
                    grad_norm: s.applied_norm,
                    raw_grad_norm: s.grad_norm,
                    codes_used: s.codes_used,
                },
            )?;
        }
        if plan.ends_epoch(step) {
            let mut rng = stream_rng(seed, Stream::Reseed, &[plan.epoch(step)]);
            let mut pool: Vec<&Tensor> = clips.iter().map(|c| &c.cembed.values).collect();
            pool.shuffle(&mut rng);
            pool.truncate(RESEED_CLIPS);
            model.reseed_dead_codes(&pool, &mut rng)?;
        }
        if done % cfg.checkpoint_interval == 0 {
            Checkpoint::capture(hash, done, &model.params, &opt, &model.usage)
                .save(&checkpoint_path(&dir, done))?;
        }
    }
    let end = plan.total.max(start);
    Checkpoint::capture(hash, end, &model.params, &opt, &model.usage).save(&final_checkpoint(&dir))?;
    let summary = VqSummary {
        steps: end,
        resumed_from: start,
        initial: initial.into(),
        final_loss: probe_loss(&model, &clips, plan.batch)?.into(),
        probe_clips: clips.len().min(PROBE_CLIPS),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// VQ-VAE restored from a checkpoint written under `cfg`.
pub fn load_vq(cfg: &RunConfig, path: &Path) -> Result<VqVae> {
    let ck = Checkpoint::load(path)?;
    ck.expect_hash(cfg.vq_hash(), "vq-vae")?;
    let mut model = VqVae::new(cfg.vq.clone(), &mut stream_rng(0, Stream::VqInit, &[]))?;
    ck.restore(&mut model.params)?;
    Ok(model)
}

/// Encodes every prepared clip with the final VQ-VAE and writes one code
/// file per clip. Returns the number of files written.
pub fn extract_codes(cfg: &RunConfig, _seed: u64, out: &Path) -> Result<usize> {
    let layout = Layout::new(out);
    let model = load_vq(cfg, &final_checkpoint(&layout.vq_dir()))?;
    let manifest = tagged_manifest(&layout)?;
    let stats = corpus_stats(&layout)?;
    for (i, e) in manifest.entries.iter().enumerate() {
        let c = load_cembed(&layout, cfg, &stats, i)?;
        write_codes(&layout.codes(i), &model.codes(&c.values)?, e.label)?;
    }
    Ok(manifest.entries.len())
}

fn fresh_snail(cfg: &RunConfig, seed: u64) -> Result<SnailModel> {
    Ok(SnailModel::new(cfg.snail.clone(), &mut stream_rng(seed, Stream::SnailInit, &[]))?)
}

pub fn load_snail(cfg: &RunConfig, path: &Path) -> Result<SnailModel> {
    let ck = Checkpoint::load(path)?;
    ck.expect_hash(cfg.snail_hash(), "prior")?;
    let mut model = fresh_snail(cfg, 0)?;
    ck.restore(&mut model.params)?;
    Ok(model)
}

fn mean_nll(model: &SnailModel, grids: &[(usize, CodeGrid, CategoryLabel)]) -> Result<f64> {
    let probe = &grids[..grids.len().min(PROBE_CLIPS)];
    let mut sum = 0.0;
    for (_, g, l) in probe {
        sum += model.nll(g, *l)?;
    }
    Ok(sum / probe.len() as f64)
}

/// Trains the prior on the training split's code grids under the cyclic
/// schedule. Writes the same artifacts as [`train_vqvae`] under `snail/`.
pub fn train_snail(cfg: &RunConfig, seed: u64, out: &Path, resume: Option<&Path>) -> Result<SnailSummary> {
    let layout = Layout::new(out);
    let dir = layout.snail_dir();
    let manifest = tagged_manifest(&layout)?;
    let grids: Vec<(usize, CodeGrid, CategoryLabel)> = manifest
        .with_split(Split::Train)
        .map(|(i, _)| {
            let path: PathBuf = layout.codes(i);
            let (g, l) = read_codes(&path)?;
            if (g.rows(), g.cols()) != (cfg.snail.grid_rows, cfg.snail.grid_cols) {
                return Err(PipelineError::Versioning(format!(
                    "{} is {}x{}, prior expects {}x{}; rerun extract-codes",
                    path.display(),
                    g.rows(),
                    g.cols(),
                    cfg.snail.grid_rows,
                    cfg.snail.grid_cols
                )));
            }
            Ok((i, g, l))
        })
        .collect::<Result<_>>()?;
    let plan = Plan::new(grids.len(), &cfg.snail_train)?;
    let schedule = CyclicLr::new(cfg.snail_base_lr, cfg.snail_max_lr, cfg.snail_cycle_steps)?;
    let hash = cfg.snail_hash();

    let mut model = fresh_snail(cfg, seed)?;
    let initial_nll = mean_nll(&model, &grids)?;
    let mut opt = Adam::new(&model.params);
    let mut start = 0;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        ck.expect_hash(hash, "prior")?;
        opt = ck.restore(&mut model.params)?;
        start = ck.step;
    }

    let log_path = dir.join("log.jsonl");
    let mut log = open_log(&log_path, start)?;
    for step in start..plan.total {
        let batch: Vec<SnailExample> = plan
            .batch(seed, step)
            .into_iter()
            .map(|i| SnailExample {
                id: grids[i].0,
                codes: &grids[i].1,
                label: grids[i].2,
            })
            .collect();
        let lr = schedule.lr(step);
        let s = model.train_step(&mut opt, &batch, lr, Some(cfg.snail_train.max_grad_norm), step)?;
        let done = step + 1;
        if done % cfg.log_interval == 0 {
            log_line(
                &mut log,
                &log_path,
                &SnailLogLine {
                    step: done,
                    epoch: plan.epoch(step),
                    lr,
                    nll: s.nll,
                    grad_norm: s.applied_norm,
                    raw_grad_norm: s.grad_norm,
                },
            )?;
        }
        if done % cfg.checkpoint_interval == 0 {
            Checkpoint::capture(hash, done, &model.params, &opt, &[]).save(&checkpoint_path(&dir, done))?;
        }
    }
    let end = plan.total.max(start);
    Checkpoint::capture(hash, end, &model.params, &opt, &[]).save(&final_checkpoint(&dir))?;
    let summary = SnailSummary {
        steps: end,
        resumed_from: start,
        initial_nll,
        final_nll: mean_nll(&model, &grids)?,
        probe_grids: grids.len().min(PROBE_CLIPS),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
