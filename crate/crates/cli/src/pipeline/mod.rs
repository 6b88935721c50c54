//! The stages of a run, each reading and writing a shared work directory.

mod data;
mod evaluate;
mod generate;
mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zenfoley_core::frontend::cembed::splitmix64;
use zenfoley_core::split::{stratified_split, Split};

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::manifest::Manifest;

pub use data::{corpus_stats, load_cembed, prepare, prepare_clip, PrepareSummary};
pub use evaluate::{evaluate, embed_clip, format_report, report_records};
pub use generate::{generate, GenerateSummary};
pub use train::{
    extract_codes, load_snail, load_vq, train_snail, train_vqvae, SnailLogLine, SnailSummary,
    VqLogLine, VqSummary,
};

/// Where every stage reads and writes inside `--out`.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.tsv")
    }

    pub fn corpus_stats(&self) -> PathBuf {
        self.root.join("corpus_stats.txt")
    }

    pub fn features(&self, clip: usize) -> PathBuf {
        self.root.join("cache").join(format!("{clip:05}.cfe"))
    }

    pub fn cembed(&self, clip: usize) -> PathBuf {
        self.root.join("cache").join(format!("{clip:05}.cem"))
    }

    pub fn codes(&self, clip: usize) -> PathBuf {
        self.root.join("codes").join(format!("{clip:05}.code"))
    }

    pub fn vq_dir(&self) -> PathBuf {
        self.root.join("vqvae")
    }

    pub fn snail_dir(&self) -> PathBuf {
        self.root.join("snail")
    }

    pub fn generated_dir(&self) -> PathBuf {
        self.root.join("generated")
    }

    pub fn generated_manifest(&self) -> PathBuf {
        self.generated_dir().join("manifest.tsv")
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn report_records(&self) -> PathBuf {
        self.root.join("report.tsv")
    }
}

/// Checkpoint file for `step` inside a model directory.
pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:08}.zfck"))
}

pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join("final.zfck")
}

/// Independent random streams, keyed by purpose and position.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub(crate) enum Stream {
    VqInit = 1,
    Shuffle = 2,
    Mask = 3,
    Reseed = 4,
    SnailInit = 5,
    Sample = 6,
    Stub = 7,
}

pub(crate) fn derive_seed(seed: u64, stream: Stream, words: &[u64]) -> u64 {
    let mut s = seed;
    let mut out = splitmix64(&mut s);
    for w in std::iter::once(stream as u64).chain(words.iter().copied()) {
        s ^= out ^ w;
        out = splitmix64(&mut s);
    }
    out
}

pub(crate) fn stream_rng(seed: u64, stream: Stream, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, words))
}

/// Assigns train and validation tags to the configured input manifest and
/// writes the result to the work directory. Returns `(train, val)` counts.
pub fn split(cfg: &RunConfig, seed: u64, out: &Path) -> Result<(usize, usize)> {
    let src = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| PipelineError::Config("data.manifest is not set".into()))?;
    let mut m = Manifest::read(src)?;
    let tags = stratified_split(&m.labels(), cfg.per_class_val, seed)?;
    for (e, t) in m.entries.iter_mut().zip(&tags) {
        e.split = Some(*t);
    }
    m.write(&Layout::new(out).manifest())?;
    let val = tags.iter().filter(|&&t| t == Split::Val).count();
    Ok((tags.len() - val, val))
}

/// Reads the work-directory manifest, which must carry split tags.
pub(crate) fn tagged_manifest(layout: &Layout) -> Result<Manifest> {
    let m = Manifest::read(&layout.manifest())?;
    if let Some(e) = m.entries.iter().find(|e| e.split.is_none()) {
        return Err(PipelineError::Config(format!(
            "{} has no split tag; run `split` first",
            e.path.display()
        )));
    }
    Ok(m)
}
