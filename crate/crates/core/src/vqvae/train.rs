use alloc::vec::Vec;

use rand::Rng;

use crate::category::CategoryLabel;
use crate::codes::CodeGrid;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{clip_grad_norm, Adam, Bound};
use crate::tensor::Tensor;

use super::model::VqVae;
use super::quantize::quantize;

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub z_e: Var,
    /// Codeword lookup; carries gradient to the codebook only.
    pub z_q: Var,
    /// `z_q` values with gradient routed straight through to `z_e`.
    pub decoder_in: Var,
    pub recon: Var,
    pub logits: Var,
    pub codes: CodeGrid,
}

/// Scalar loss nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub reconstruction: Var,
    pub codebook: Var,
    /// Already multiplied by β.
    pub commitment: Var,
    /// Unweighted cross-entropy of the category head.
    pub class_ce: Var,
}

/// Loss values of a step, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VqLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub class_ce: f64,
    /// Mean squared gap between `z_e` and `z_q` per latent value.
    pub latent_diff: f64,
}

/// `mean((x − x̂)²) + ‖sg(z_e) − z_q‖² + β‖z_e − sg(z_q)‖² + w·CE`, where the
/// two latent norms are averaged over grid cells and summed over channels.
#[allow(clippy::too_many_arguments)]
pub fn vqvae_loss(
    g: &mut Graph,
    x: Var,
    recon: Var,
    z_e: Var,
    z_q: Var,
    logits: Var,
    label: CategoryLabel,
    beta: f32,
    class_weight: f32,
) -> Result<LossTerms> {
    if beta < 0.0 {
        return Err(Error::config("beta must be >= 0"));
    }
    let diff = g.sub(x, recon)?;
    let sq = g.square(diff);
    let reconstruction = g.mean(sq);

    let zs = g.shape(z_e).to_vec();
    if zs.len() != 3 || g.shape(z_q) != zs.as_slice() {
        return Err(Error::dim("vqvae_loss", &zs, g.shape(z_q)));
    }
    let per_cell = 1.0 / (zs[1] * zs[2]) as f32;

    let ze_sg = g.stop_gradient(z_e);
    let d = g.sub(ze_sg, z_q)?;
    let d = g.square(d);
    let d = g.sum(d);
    let codebook = g.scale(d, per_cell);

    let zq_sg = g.stop_gradient(z_q);
    let c = g.sub(z_e, zq_sg)?;
    let c = g.square(c);
    let c = g.sum(c);
    let commitment = g.scale(c, beta * per_cell);

    let ls = g.log_softmax_lastdim(logits)?;
    let picked = g.gather_lastdim(ls, &[label.id()])?;
    let picked = g.sum(picked);
    let class_ce = g.scale(picked, -1.0);

    let t = g.add(reconstruction, codebook)?;
    let t = g.add(t, commitment)?;
    let weighted = g.scale(class_ce, class_weight);
    let total = g.add(t, weighted)?;
    Ok(LossTerms {
        total,
        reconstruction,
        codebook,
        commitment,
        class_ce,
    })
}

impl LossTerms {
    pub fn read(&self, g: &Graph) -> Result<VqLoss> {
        let v = |x: Var| g.value(x).item().map(|f| f as f64);
        Ok(VqLoss {
            total: v(self.total)?,
            reconstruction: v(self.reconstruction)?,
            codebook: v(self.codebook)?,
            commitment: v(self.commitment)?,
            class_ce: v(self.class_ce)?,
            latent_diff: 0.0,
        })
    }
}

/// One training clip.
#[derive(Clone, Copy, Debug)]
pub struct VqExample<'a> {
    pub id: usize,
    pub input: &'a Tensor,
    pub label: CategoryLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqStep {
    pub loss: VqLoss,
    pub grad_norm: f64,
    /// Norm actually applied (equal to `grad_norm` unless clipped).
    pub applied_norm: f64,
    pub codes_used: usize,
}

impl VqVae {
    /// Encoder, quantizer, decoder and class head for one clip.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Forward> {
        let z_e = self.encode_var(g, p, x)?;
        let (_, codes) = quantize(g.value(z_e), self.codewords())?;
        let z_q = self.lookup_var(g, p, &codes)?;
        let decoder_in = g.straight_through(z_e, z_q)?;
        let recon = self.decode_var(g, p, decoder_in)?;
        let logits = self.classify_var(g, p, z_e)?;
        Ok(Forward {
            z_e,
            z_q,
            decoder_in,
            recon,
            logits,
            codes,
        })
    }

    /// Batch loss without touching parameters.
    pub fn evaluate(&self, batch: &[VqExample]) -> Result<VqLoss> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let (_, loss, _) = self.batch_loss(&mut g, &p, batch)?;
        Ok(loss)
    }

    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &[VqExample],
    ) -> Result<(Var, VqLoss, Vec<CodeGrid>)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut totals = Vec::with_capacity(batch.len());
        let mut sum = VqLoss::default();
        let mut grids = Vec::with_capacity(batch.len());
        for ex in batch {
            let x = g.input(ex.input.clone());
            let f = self.forward(g, p, x)?;
            let terms = vqvae_loss(
                g,
                x,
                f.recon,
                f.z_e,
                f.z_q,
                f.logits,
                ex.label,
                self.config.beta,
                self.config.class_weight,
            )?;
            let l = terms.read(g)?;
            sum.total += l.total;
            sum.reconstruction += l.reconstruction;
            sum.codebook += l.codebook;
            sum.commitment += l.commitment;
            sum.class_ce += l.class_ce;
            sum.latent_diff += l.codebook / self.config.embed_dim as f64;
            totals.push(g.reshape(terms.total, &[1])?);
            grids.push(f.codes);
        }
        let n = batch.len() as f64;
        let mean = VqLoss {
            total: sum.total / n,
            reconstruction: sum.reconstruction / n,
            codebook: sum.codebook / n,
            commitment: sum.commitment / n,
            class_ce: sum.class_ce / n,
            latent_diff: sum.latent_diff / n,
        };
        let stacked = g.concat_axis0(&totals)?;
        let loss = g.mean(stacked);
        Ok((loss, mean, grids))
    }

    /// One optimizer step on `batch`. A non-finite loss aborts before any
    /// parameter changes and names the offending clips.
    pub fn train_step(
        &mut self,
        opt: &mut Adam,
        batch: &[VqExample],
        lr: f64,
        max_grad_norm: Option<f64>,
        step: u64,
    ) -> Result<VqStep> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, true);
        let failed = || Error::Training {
            step,
            batch_ids: batch.iter().map(|e| e.id).collect(),
        };
        // A non-finite latent surfaces from the quantizer before any loss exists.
        let (loss_var, loss, grids) = self
            .batch_loss(&mut g, &p, batch)
            .map_err(|e| if matches!(e, Error::Numerical(_)) { failed() } else { e })?;
        if !g.value(loss_var).is_finite() {
            return Err(failed());
        }
        let grads = g.backward(loss_var)?;
        let mut grads = p.collect(&self.params, &grads);
        let (grad_norm, applied_norm) = match max_grad_norm {
            Some(m) => clip_grad_norm(&mut grads, m),
            None => {
                let n = crate::nn::grad_norm(&grads);
                (n, n)
            }
        };
        if !grad_norm.is_finite() {
            return Err(failed());
        }
        opt.apply(&mut self.params, &grads, lr)?;
        for grid in &grids {
            for &k in grid.raster() {
                self.usage[k] += 1;
            }
        }
        let codes_used = {
            let mut seen = alloc::vec![false; self.config.codebook_size];
            grids.iter().flat_map(|g| g.raster()).for_each(|&k| seen[k] = true);
            seen.iter().filter(|&&s| s).count()
        };
        Ok(VqStep {
            loss,
            grad_norm,
            applied_norm,
            codes_used,
        })
    }

    /// Moves every codeword that received no assignments since the last call
    /// onto a randomly chosen encoder output from `inputs`, then clears the
    /// usage counters. Returns how many codewords moved.
    pub fn reseed_dead_codes<R: Rng + ?Sized>(
        &mut self,
        inputs: &[&Tensor],
        rng: &mut R,
    ) -> Result<usize> {
        let d = self.config.embed_dim;
        let mut pool: Vec<Vec<f32>> = Vec::new();
        for x in inputs {
            let z = self.encode(x)?;
            let cells = z.numel() / d;
            let v = z.data();
            pool.extend((0..cells).map(|c| (0..d).map(|j| v[j * cells + c]).collect()));
        }
        let dead: Vec<usize> = (0..self.config.codebook_size)
            .filter(|&k| self.usage[k] == 0)
            .collect();
        let mut moved = 0;
        if !pool.is_empty() {
            let book = self.codewords_mut().data_mut();
            for &k in &dead {
                let src = &pool[rng.gen_range(0..pool.len())];
                book[k * d..(k + 1) * d].copy_from_slice(src);
                moved += 1;
            }
        }
        self.usage.iter_mut().for_each(|u| *u = 0);
        Ok(moved)
    }
}
