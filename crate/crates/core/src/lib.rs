//! Class-conditional foley synthesis core.
//!
//! Pure computation only: tensors with reverse-mode differentiation, the audio
//! feature frontend, the class-conditioned VQ-VAE, the Zen-mode PixelSNAIL
//! prior and Fréchet audio distance. File formats, audio IO and the command
//! line live in the companion `zenfoley` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod category;
pub mod codes;
pub mod error;
pub mod fad;
pub mod frontend;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod schedule;
pub mod snail;
pub mod split;
pub mod tensor;
pub mod vqvae;

pub use category::{CategoryLabel, CATEGORY_NAMES, NUM_CATEGORIES};
pub use codes::CodeGrid;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
