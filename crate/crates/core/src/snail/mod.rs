//! Autoregressive prior over code grids: gated causal convolutions
//! interleaved with downsampled causal attention.

mod causal;
mod model;
mod train;

pub use causal::{causal_conv, causal_conv_transpose, CausalConv, CausalConvTranspose};
pub use model::{AttentionStats, GatedCausal, SnailConfig, SnailModel, ZenAttention};
pub use train::{nll_from_logits, SnailExample, SnailStep};
