use std::fmt::Write as _;
use std::path::Path;

use zenfoley_core::fad::{evaluate_fad, spectral_stats_embedding, FadReport};
use zenfoley_core::split::Split;
use zenfoley_core::CategoryLabel;

use super::data::clip_mel;
use super::{tagged_manifest, Layout};
use crate::config::{FadBackend, RunConfig};
use crate::error::{PipelineError, Result};
use crate::formats::{read_matrix, write_bytes, FEATURE_MAGIC};
use crate::manifest::{Entry, Manifest};

/// Embedding of one clip under the configured backend.
pub fn embed_clip(cfg: &RunConfig, path: &Path) -> Result<Vec<f64>> {
    match cfg.fad_backend {
        FadBackend::SpectralStats => Ok(spectral_stats_embedding(&clip_mel(cfg, path)?)),
        FadBackend::Precomputed => {
            let m = read_matrix(&path.with_extension("cfe"), FEATURE_MAGIC)?;
            Ok(m.data().iter().map(|&v| v as f64).collect())
        }
    }
}

fn embed_all<'a>(
    cfg: &RunConfig,
    entries: impl Iterator<Item = &'a Entry>,
    failed: &mut Vec<(std::path::PathBuf, String)>,
) -> Vec<(CategoryLabel, Vec<f64>)> {
    let mut out = Vec::new();
    for e in entries {
        match embed_clip(cfg, &e.path) {
            Ok(v) => out.push((e.label, v)),
            Err(err) => failed.push((e.path.clone(), err.to_string())),
        }
    }
    out
}

/// Per-category FAD of the generated clips against the validation split.
/// Writes `report.txt` and `report.tsv`.
pub fn evaluate(cfg: &RunConfig, _seed: u64, out: &Path) -> Result<FadReport> {
    let layout = Layout::new(out);
    let generated = Manifest::read(&layout.generated_manifest())?;
    let reference = tagged_manifest(&layout)?;
    let mut failed = Vec::new();
    let gen = embed_all(cfg, generated.entries.iter(), &mut failed);
    let refs = embed_all(cfg, reference.with_split(Split::Val).map(|(_, e)| e), &mut failed);
    if !failed.is_empty() {
        return Err(PipelineError::Unreadable(failed));
    }
    let report = evaluate_fad(cfg.fad_backend.as_str(), &gen, &refs)?;
    write_bytes(&layout.report_text(), format_report(&report).as_bytes())?;
    write_bytes(&layout.report_records(), report_records(&report).as_bytes())?;
    Ok(report)
}

pub fn format_report(r: &FadReport) -> String {
    let mut s = format!("FAD ({})\n", r.backend);
    writeln!(s, "{:<3} {:<20} {:>14} {:>10} {:>10}", "id", "category", "fad", "generated", "reference").unwrap();
    for e in &r.entries {
        writeln!(
            s,
            "{:<3} {:<20} {:>14.6} {:>10} {:>10}",
            e.category.id(),
            e.category.name(),
            e.reported(),
            e.n_generated,
            e.n_reference
        )
        .unwrap();
    }
    s
}

/// `category_id, category_name, fad, n_generated, n_reference`, tab-separated.
pub fn report_records(r: &FadReport) -> String {
    let mut s = String::new();
    for e in &r.entries {
        writeln!(
            s,
            "{}\t{}\t{:?}\t{}\t{}",
            e.category.id(),
            e.category.name(),
            e.reported(),
            e.n_generated,
            e.n_reference
        )
        .unwrap();
    }
    s
}
