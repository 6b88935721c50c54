//! Waveforms to combined embeddings and back.

pub mod audio;
pub mod cembed;
pub mod fft;
pub mod mel;
pub mod vocoder;

pub use audio::{resample, Waveform, CLIP_SECONDS, MODEL_RATE, SOURCE_RATE};
pub use cembed::{
    assemble_cembed, assemble_parts, mask_augment, stub_features, CEmbed, CorpusStats,
    ExternalFeatures, Mask, MaskSpec, FEATURE_ROWS, FRAMES, MEL_ROWS,
};
pub use mel::{melspectrogram, MelFilterbank, MelParams, MelSpec};
pub use vocoder::invert_mel;
