use alloc::vec::Vec;

use rand::Rng;

use crate::category::CategoryLabel;
use crate::codes::CodeGrid;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{clip_grad_norm, grad_norm, Adam, Bound};
use crate::tensor::Tensor;

use super::model::{AttentionStats, SnailModel};

/// One training sequence.
#[derive(Clone, Copy, Debug)]
pub struct SnailExample<'a> {
    pub id: usize,
    pub codes: &'a CodeGrid,
    pub label: CategoryLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnailStep {
    /// Mean per-token negative log-likelihood over the batch, in nats.
    pub nll: f64,
    pub grad_norm: f64,
    pub applied_norm: f64,
}

/// Mean over positions of `−log p(tokens[t] | tokens[..t])` given `(n, K)`
/// logits.
pub fn nll_from_logits(g: &mut Graph, logits: Var, tokens: &[usize]) -> Result<Var> {
    let ls = g.log_softmax_lastdim(logits)?;
    let picked = g.gather_lastdim(ls, tokens)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

impl SnailModel {
    fn check_grid(&self, codes: &CodeGrid) -> Result<()> {
        let c = &self.config;
        if (codes.rows(), codes.cols()) != (c.grid_rows, c.grid_cols) {
            return Err(Error::dim(
                "snail grid",
                &[codes.rows(), codes.cols()],
                &[c.grid_rows, c.grid_cols],
            ));
        }
        Ok(())
    }

    pub fn nll_var(
        &self,
        g: &mut Graph,
        p: &Bound,
        codes: &CodeGrid,
        label: CategoryLabel,
    ) -> Result<Var> {
        self.check_grid(codes)?;
        let logits = self.logits_var(g, p, codes.raster(), label, &mut AttentionStats::default())?;
        nll_from_logits(g, logits, codes.raster())
    }

    /// Mean per-token negative log-likelihood of a full grid.
    pub fn nll(&self, codes: &CodeGrid, label: CategoryLabel) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let v = self.nll_var(&mut g, &p, codes, label)?;
        Ok(g.value(v).item()? as f64)
    }

    /// `log p(tokens)` summed over positions, accumulated in 64-bit.
    pub fn sequence_log_prob(&self, tokens: &[usize], label: CategoryLabel) -> Result<f64> {
        let logits = self.logits(tokens, label)?;
        let k = self.config.codebook_size;
        Ok(logits
            .data()
            .chunks_exact(k)
            .zip(tokens)
            .map(|(row, &t)| log_softmax_at(row, t))
            .sum())
    }

    /// Logits `(K)` for the token following `prefix`. Runs the network on the
    /// prefix only.
    pub fn next_logits(&self, prefix: &[usize], label: CategoryLabel) -> Result<Vec<f32>> {
        if prefix.len() >= self.config.seq_len() {
            return Err(Error::contract("prefix already fills the grid"));
        }
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(self.config.start_token());
        input.extend_from_slice(prefix);
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let h = self.embed_var(&mut g, &p, &input)?;
        let l = self.logits_from_embedding(&mut g, &p, h, label, &mut AttentionStats::default())?;
        let k = self.config.codebook_size;
        Ok(g.value(l).data()[prefix.len() * k..].to_vec())
    }

    /// Draws a full grid token by token at the given softmax temperature.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        label: CategoryLabel,
        temperature: f64,
        rng: &mut R,
    ) -> Result<CodeGrid> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::config(alloc::format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.decode_with(label, |logits| {
            let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let w: Vec<f64> = logits
                .iter()
                .map(|&l| libm::exp((l as f64 - max) / temperature))
                .collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for (i, &x) in w.iter().enumerate() {
                if u < x {
                    return i;
                }
                u -= x;
            }
            // Rounding left `u` past the last bucket.
            w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
        })
    }

    /// Most likely token at every step; ties go to the lowest index.
    pub fn greedy(&self, label: CategoryLabel) -> Result<CodeGrid> {
        self.decode_with(label, |logits| {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        })
    }

    fn decode_with(
        &self,
        label: CategoryLabel,
        mut pick: impl FnMut(&[f32]) -> usize,
    ) -> Result<CodeGrid> {
        let n = self.config.seq_len();
        let mut tokens = Vec::with_capacity(n);
        while tokens.len() < n {
            let logits = self.next_logits(&tokens, label)?;
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::Numerical(alloc::format!(
                    "non-finite logits at position {}",
                    tokens.len()
                )));
            }
            tokens.push(pick(&logits));
        }
        CodeGrid::new(self.config.grid_rows, self.config.grid_cols, tokens)
    }

    /// One optimizer step on `batch`.
    pub fn train_step(
        &mut self,
        opt: &mut Adam,
        batch: &[SnailExample],
        lr: f64,
        max_grad_norm: Option<f64>,
        step: u64,
    ) -> Result<SnailStep> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let failed = || Error::Training {
            step,
            batch_ids: batch.iter().map(|e| e.id).collect(),
        };
        let mut g = Graph::new();
        let p = self.bind(&mut g, true);
        let mut per = Vec::with_capacity(batch.len());
        for ex in batch {
            let v = self.nll_var(&mut g, &p, ex.codes, ex.label)?;
            per.push(g.reshape(v, &[1])?);
        }
        let stacked = g.concat_axis0(&per)?;
        let loss = g.mean(stacked);
        let nll = g.value(loss).item()? as f64;
        if !nll.is_finite() {
            return Err(failed());
        }
        let grads = g.backward(loss)?;
        let mut grads: Vec<Tensor> = p.collect(&self.params, &grads);
        let (before, after) = match max_grad_norm {
            Some(m) => clip_grad_norm(&mut grads, m),
            None => {
                let n = grad_norm(&grads);
                (n, n)
            }
        };
        if !before.is_finite() {
            return Err(failed());
        }
        opt.apply(&mut self.params, &grads, lr)?;
        Ok(SnailStep {
            nll,
            grad_norm: before,
            applied_norm: after,
        })
    }
}

fn log_softmax_at(row: &[f32], t: usize) -> f64 {
    let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = max + libm::log(row.iter().map(|&l| libm::exp(l as f64 - max)).sum::<f64>());
    row[t] as f64 - lse
}
