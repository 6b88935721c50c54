//! Files, audio IO and the staged training pipeline around `zenfoley-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod wav;

pub use config::RunConfig;
pub use error::{FormatError, PipelineError, Result};
pub use zenfoley_core as core;
