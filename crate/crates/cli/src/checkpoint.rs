//! `ZFCK` checkpoints: named tensors plus training state.
//!
//! Layout, little-endian throughout: magic, `u32` version, `u64` config
//! hash, `u64` step, `u64` optimizer step, `u32` tensor count, then per
//! tensor a `u32` name length, UTF-8 name, `u32` rank, `u32` extents and
//! `f32` data; finally a `u32` counter count and that many `u64` counters.

use std::path::Path;

use zenfoley_core::nn::{Adam, ParamStore};
use zenfoley_core::Tensor;

use crate::error::{FormatError, PipelineError, Result};
use crate::formats::{read_bytes, write_bytes, Reader};

pub const MAGIC: [u8; 4] = *b"ZFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub step: u64,
    pub optimizer_step: u64,
    /// Model parameters followed by optimizer moments (`adam.m.*`, `adam.v.*`).
    pub tensors: Vec<(String, Tensor)>,
    /// Per-codeword usage since the last dead-code sweep; empty for the prior.
    pub counters: Vec<u64>,
}

impl Checkpoint {
    pub fn capture(
        config_hash: u64,
        step: u64,
        params: &ParamStore,
        opt: &Adam,
        counters: &[u64],
    ) -> Self {
        let mut tensors: Vec<(String, Tensor)> = params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        tensors.extend(opt.state(params));
        Checkpoint {
            config_hash,
            step,
            optimizer_step: opt.step,
            tensors,
            counters: counters.to_vec(),
        }
    }

    /// Fails with a versioning error when the checkpoint was written under a
    /// different configuration.
    pub fn expect_hash(&self, hash: u64, what: &str) -> Result<()> {
        if self.config_hash != hash {
            return Err(PipelineError::Versioning(format!(
                "{what} checkpoint was written for config {:016x}, current config is {hash:016x}",
                self.config_hash
            )));
        }
        Ok(())
    }

    /// Loads parameters into `params` and returns a matching optimizer.
    pub fn restore(&self, params: &mut ParamStore) -> Result<Adam> {
        let is_moment = |n: &str| n.starts_with("adam.");
        params.load(
            self.tensors
                .iter()
                .filter(|(n, _)| !is_moment(n))
                .map(|(n, t)| (n.as_str(), t)),
        )?;
        let mut opt = Adam::new(params);
        opt.load_state(
            params,
            self.tensors
                .iter()
                .filter(|(n, _)| is_moment(n))
                .map(|(n, t)| (n.as_str(), t)),
            self.optimizer_step,
        )?;
        Ok(opt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.config_hash, self.step, self.optimizer_step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.counters.len() as u32).to_le_bytes());
        for c in &self.counters {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let config_hash = r.u64()?;
        let step = r.u64()?;
        let optimizer_step = r.u64()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| FormatError::Field {
                    field: "tensor name",
                    detail: e.to_string(),
                })?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let data = r.f32s(shape.iter().product())?;
            let t = Tensor::new(&shape, data).map_err(|e| FormatError::Field {
                field: "tensor shape",
                detail: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        let c = r.u32()? as usize;
        let counters = (0..c).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(Checkpoint {
            config_hash,
            step,
            optimizer_step,
            tensors,
            counters,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?).map_err(|e| PipelineError::format(path, e))
    }
}
