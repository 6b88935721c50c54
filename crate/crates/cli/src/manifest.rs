//! Line-delimited clip manifests: `path<TAB>category_id[<TAB>split]`.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use zenfoley_core::split::Split;
use zenfoley_core::CategoryLabel;

use crate::error::{FormatError, PipelineError, Result};
use crate::formats::{read_bytes, write_bytes};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub label: CategoryLabel,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self, FormatError> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| FormatError::Field {
                field: "record",
                detail: format!("line {}: {detail}", n + 1),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(bad(format!("{} fields, expected 2 or 3", fields.len())));
            }
            let label = fields[1]
                .trim()
                .parse::<usize>()
                .ok()
                .and_then(|id| CategoryLabel::new(id).ok())
                .ok_or_else(|| bad(format!("invalid category id {:?}", fields[1])))?;
            let split = match fields.get(2) {
                None => None,
                Some(s) => Some(
                    Split::parse(s.trim()).ok_or_else(|| bad(format!("invalid split {s:?}")))?,
                ),
            };
            let raw = Path::new(fields[0]);
            let path = if raw.is_absolute() { raw.to_path_buf() } else { base.join(raw) };
            if !seen.insert(path.clone()) {
                return Err(bad(format!("duplicate path {}", path.display())));
            }
            entries.push(Entry { path, label, split });
        }
        Ok(Manifest { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|e| {
            PipelineError::format(
                path,
                FormatError::Field {
                    field: "encoding",
                    detail: e.to_string(),
                },
            )
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| PipelineError::format(path, e))
    }

    /// Paths are written relative to `base` when they live under it.
    pub fn to_text(&self, base: &Path) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            write!(out, "{}\t{}", p.display(), e.label.id()).unwrap();
            if let Some(s) = e.split {
                write!(out, "\t{}", s.as_str()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        write_bytes(path, self.to_text(base).as_bytes())
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = (usize, &Entry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == Some(split))
    }

    pub fn labels(&self) -> Vec<CategoryLabel> {
        self.entries.iter().map(|e| e.label).collect()
    }
}
