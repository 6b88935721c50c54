use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// What is wrong inside a file whose bytes were read successfully.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("magic bytes {found:?}, expected {expected:?}")]
    Magic { expected: String, found: String },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("header field {field} is zero")]
    EmptyExtent { field: &'static str },
    #[error("payload truncated: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{field}: {detail}")]
    Field { field: &'static str, detail: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Versioning(String),

    #[error("{} unreadable: {}", .0.len(), list_paths(.0))]
    Unreadable(Vec<(PathBuf, String)>),

    #[error(transparent)]
    Core(#[from] zenfoley_core::Error),
}

fn list_paths(items: &[(PathBuf, String)]) -> String {
    items
        .iter()
        .map(|(p, why)| format!("{} ({why})", p.display()))
        .collect::<Vec<_>>()
        .join(", ")
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        PipelineError::Format {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category for the command line.
    pub fn category(&self) -> &'static str {
        use zenfoley_core::Error as E;
        match self {
            PipelineError::Io { .. } => "io",
            PipelineError::Format { .. } => "format",
            PipelineError::Config(_) => "config",
            PipelineError::Versioning(_) => "versioning",
            PipelineError::Unreadable(_) => "unreadable",
            PipelineError::Core(e) => match e {
                E::Dimension { .. } | E::Axis { .. } => "dimension",
                E::Contract(_) => "contract",
                E::Config(_) => "config",
                E::Alignment { .. } => "alignment",
                E::Training { .. } => "training",
                E::Coverage(_) => "coverage",
                E::Numerical(_) => "numerical",
            },
        }
    }
}
