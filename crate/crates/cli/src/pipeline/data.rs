use std::path::Path;

use zenfoley_core::frontend::{
    assemble_cembed, melspectrogram, resample, stub_features, CEmbed, CorpusStats,
    ExternalFeatures, MelSpec, Waveform,
};
use zenfoley_core::split::Split;

use super::{derive_seed, tagged_manifest, Layout, Stream};
use crate::config::{FeatureSource, RunConfig};
use crate::error::{FormatError, PipelineError, Result};
use crate::formats::{read_bytes, read_features, read_matrix, write_bytes, write_features, write_matrix, CEMBED_MAGIC};
use crate::wav::read_wav;

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareSummary {
    pub clips: usize,
    pub stats: CorpusStats,
}

/// A clip read from disk, brought to the model rate and exact clip length.
pub(crate) fn model_waveform(cfg: &RunConfig, path: &Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    let w = w.clone().fit_length((w.sample_rate * cfg.clip_seconds) as usize);
    Ok(resample(&w, cfg.mel.sample_rate)?.fit_length(cfg.model_samples()))
}

pub(crate) fn clip_mel(cfg: &RunConfig, path: &Path) -> Result<MelSpec> {
    Ok(melspectrogram(&model_waveform(cfg, path)?, &cfg.mel)?)
}

/// Resample, mel, features, stack. `clip` is the manifest index, which seeds
/// stub features.
pub fn prepare_clip(
    cfg: &RunConfig,
    seed: u64,
    clip: usize,
    path: &Path,
) -> Result<(ExternalFeatures, CEmbed)> {
    let mel = clip_mel(cfg, path)?;
    let features = match cfg.features {
        FeatureSource::Stub => stub_features(
            derive_seed(seed, Stream::Stub, &[clip as u64]),
            cfg.feature_rows,
            mel.frames(),
        )?,
        FeatureSource::File => {
            let f = read_features(&path.with_extension("cfe"))?;
            if f.rows() != cfg.feature_rows {
                return Err(PipelineError::format(
                    path.with_extension("cfe"),
                    FormatError::Field {
                        field: "rows",
                        detail: format!("{} rows, config expects {}", f.rows(), cfg.feature_rows),
                    },
                ));
            }
            f
        }
    };
    let c = assemble_cembed(&mel, &features)?;
    Ok((features, c))
}

/// Writes one feature file and one CEmbed cache per clip, then corpus
/// statistics over the training clips. Every unreadable clip is reported
/// in a single error.
pub fn prepare(cfg: &RunConfig, seed: u64, out: &Path) -> Result<PrepareSummary> {
    let layout = Layout::new(out);
    let manifest = tagged_manifest(&layout)?;
    let mut failed = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        match prepare_clip(cfg, seed, i, &e.path) {
            Ok((f, c)) => {
                write_features(&layout.features(i), &f)?;
                write_matrix(&layout.cembed(i), CEMBED_MAGIC, &c.values)?;
            }
            Err(err) => failed.push((e.path.clone(), err.to_string())),
        }
    }
    if !failed.is_empty() {
        return Err(PipelineError::Unreadable(failed));
    }
    // Second pass over the caches keeps only one clip in memory at a time.
    let mut read_err = None;
    let train = manifest.with_split(Split::Train).map_while(|(i, _)| {
        let c = read_matrix(&layout.cembed(i), CEMBED_MAGIC)
            .and_then(|v| Ok(CEmbed::new(v, cfg.mel.n_mels)?));
        c.map_err(|e| read_err = Some(e)).ok()
    });
    let stats = CorpusStats::compute(train);
    if let Some(e) = read_err {
        return Err(e);
    }
    let stats = stats?;
    write_stats(&layout.corpus_stats(), &stats)?;
    Ok(PrepareSummary {
        clips: manifest.entries.len(),
        stats,
    })
}

fn write_stats(path: &Path, s: &CorpusStats) -> Result<()> {
    // `{:?}` prints the shortest decimal that reads back to the same f32.
    let text = format!(
        "mel_mean = {:?}\nmel_std = {:?}\nfeature_mean = {:?}\nfeature_std = {:?}\n",
        s.mel_mean, s.mel_std, s.feature_mean, s.feature_std
    );
    write_bytes(path, text.as_bytes())
}

pub fn corpus_stats(layout: &Layout) -> Result<CorpusStats> {
    let path = layout.corpus_stats();
    let text = String::from_utf8_lossy(&read_bytes(&path)?).into_owned();
    let mut s = CorpusStats::default();
    let mut seen = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let bad = |detail: String| {
            PipelineError::format(&path, FormatError::Field { field: "corpus stats", detail })
        };
        let (k, v) = line.split_once('=').ok_or_else(|| bad(line.to_string()))?;
        let v: f32 = v.trim().parse().map_err(|_| bad(line.to_string()))?;
        match k.trim() {
            "mel_mean" => s.mel_mean = v,
            "mel_std" => s.mel_std = v,
            "feature_mean" => s.feature_mean = v,
            "feature_std" => s.feature_std = v,
            other => return Err(bad(format!("unknown key {other}"))),
        }
        seen += 1;
    }
    if seen != 4 {
        return Err(PipelineError::format(
            &path,
            FormatError::Field {
                field: "corpus stats",
                detail: format!("{seen} of 4 entries present"),
            },
        ));
    }
    Ok(s)
}

/// Cached CEmbed for `clip`, standardized with the corpus statistics.
pub fn load_cembed(layout: &Layout, cfg: &RunConfig, stats: &CorpusStats, clip: usize) -> Result<CEmbed> {
    let path = layout.cembed(clip);
    let values = read_matrix(&path, CEMBED_MAGIC)?;
    let want = [cfg.vq.in_rows, cfg.vq.in_frames];
    if values.shape() != want {
        return Err(PipelineError::Versioning(format!(
            "{} holds {:?}, config expects {want:?}; rerun prepare",
            path.display(),
            values.shape()
        )));
    }
    Ok(stats.standardize(&CEmbed::new(values, cfg.mel.n_mels)?))
}
