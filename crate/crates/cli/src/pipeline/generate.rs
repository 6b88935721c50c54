use std::path::Path;

use zenfoley_core::frontend::{invert_mel, CEmbed, MelSpec};
use zenfoley_core::CategoryLabel;

use super::data::corpus_stats;
use super::train::{load_snail, load_vq};
use super::{final_checkpoint, stream_rng, Layout, Stream};
use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::formats::write_codes;
use crate::manifest::{Entry, Manifest};
use crate::wav::write_wav;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub files: usize,
    pub samples_per_file: usize,
}

fn file_stem(label: CategoryLabel, i: usize) -> String {
    let name: String = label
        .name()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{}_{name}_{i:03}", label.id())
}

/// Samples `per_class` grids per category from the prior, decodes them to
/// CEmbeds, inverts the mel rows to audio and writes WAVs, their code grids
/// and a manifest under `generated/`.
pub fn generate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<GenerateSummary> {
    let layout = Layout::new(out);
    let vq = load_vq(cfg, &final_checkpoint(&layout.vq_dir()))?;
    let prior = load_snail(cfg, &final_checkpoint(&layout.snail_dir()))?;
    if prior.config.codebook_size != vq.config.codebook_size {
        return Err(PipelineError::Versioning(format!(
            "prior models {} codes, vq-vae has {}",
            prior.config.codebook_size, vq.config.codebook_size
        )));
    }
    let stats = corpus_stats(&layout)?;
    let dir = layout.generated_dir();
    let mut manifest = Manifest::default();
    for label in CategoryLabel::all() {
        for i in 0..cfg.per_class {
            let mut rng = stream_rng(seed, Stream::Sample, &[label.id() as u64, i as u64]);
            let grid = prior.sample(label, cfg.temperature, &mut rng)?;
            let decoded = CEmbed::new(vq.decode_codes(&grid)?, cfg.mel.n_mels)?;
            let mel = MelSpec {
                values: stats.destandardize(&decoded).mel_part(),
                params: cfg.mel,
            };
            let audio = invert_mel(&mel, cfg.griffin_lim_iters)?.fit_length(cfg.model_samples());
            let stem = file_stem(label, i);
            let wav = dir.join(format!("{stem}.wav"));
            write_wav(&wav, &audio)?;
            write_codes(&dir.join(format!("{stem}.code")), &grid, label)?;
            manifest.entries.push(Entry {
                path: wav,
                label,
                split: None,
            });
        }
    }
    manifest.write(&layout.generated_manifest())?;
    Ok(GenerateSummary {
        files: manifest.entries.len(),
        samples_per_file: cfg.model_samples(),
    })
}
