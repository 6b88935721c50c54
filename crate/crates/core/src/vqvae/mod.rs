//! Class-conditioned VQ-VAE over combined embeddings.

mod model;
mod quantize;
mod train;

pub use model::{VqConfig, VqVae, DOWNSAMPLE};
pub use quantize::quantize;
pub use train::{vqvae_loss, Forward, LossTerms, VqExample, VqLoss, VqStep};
