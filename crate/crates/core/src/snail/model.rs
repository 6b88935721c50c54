use alloc::vec::Vec;

use rand::Rng;

use crate::category::{CategoryLabel, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::causal::{CausalConv, CausalConvTranspose};

#[derive(Clone, Debug, PartialEq)]
pub struct SnailConfig {
    pub codebook_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub channels: usize,
    pub blocks: usize,
    /// Kernel length of the gated causal convolutions.
    pub kernel: usize,
    /// Downsampling factor `S` of the attention path; 1 gives dense attention.
    pub zen_stride: usize,
    pub heads: usize,
}

impl SnailConfig {
    pub fn full_scale() -> Self {
        SnailConfig {
            codebook_size: 1024,
            grid_rows: 288,
            grid_cols: 75,
            channels: 256,
            blocks: 4,
            kernel: 2,
            zen_stride: 4,
            heads: 4,
        }
    }

    pub fn desk() -> Self {
        SnailConfig {
            codebook_size: 128,
            grid_rows: 8,
            grid_cols: 16,
            channels: 48,
            blocks: 2,
            kernel: 3,
            zen_stride: 4,
            heads: 1,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Index of the start token in the embedding table.
    pub fn start_token(&self) -> usize {
        self.codebook_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 || self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::config("codebook and grid extents must be positive"));
        }
        if self.kernel == 0 || self.zen_stride == 0 || self.heads == 0 {
            return Err(Error::config("kernel, zen stride and heads must be positive"));
        }
        if self.channels == 0 || self.channels % self.heads != 0 {
            return Err(Error::config(alloc::format!(
                "channels {} must be a positive multiple of heads {}",
                self.channels,
                self.heads
            )));
        }
        Ok(())
    }
}

/// Attention work done by forward passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttentionStats {
    /// Score entries computed, `M²` per head and block.
    pub entries: u64,
    /// Entries dense attention over the full sequence would have needed.
    pub dense_entries: u64,
}

/// `x + proj(tanh(a) ⊙ σ(b))`, `[a; b] = causal_conv(elu(x))`.
#[derive(Clone, Debug)]
pub struct GatedCausal {
    conv: CausalConv,
    proj: CausalConv,
    width: usize,
}

impl GatedCausal {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let c = channels;
        GatedCausal {
            conv: CausalConv::new(store, &alloc::format!("{name}.conv"), c, 2 * c, kernel, 1, rng),
            proj: CausalConv::new(store, &alloc::format!("{name}.proj"), c, c, 1, 1, rng),
            width: c,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let a = g.elu(x);
        let a = self.conv.forward(g, p, a)?;
        let f = g.slice(a, 0, 0, self.width)?;
        let s = g.slice(a, 0, self.width, 2 * self.width)?;
        let f = g.tanh(f);
        let s = g.sigmoid(s);
        let h = g.mul(f, s)?;
        let h = self.proj.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Causal self-attention on an `S`-fold downsampled sequence, upsampled back
/// with a causal transposed convolution and added to the input.
#[derive(Clone, Debug)]
pub struct ZenAttention {
    q: CausalConv,
    k: CausalConv,
    v: CausalConv,
    up: CausalConvTranspose,
    heads: usize,
}

impl ZenAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        stride: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || stride == 0 || channels % heads != 0 {
            return Err(Error::config(alloc::format!(
                "zen attention: {channels} channels, {heads} heads, stride {stride}"
            )));
        }
        let (c, st) = (channels, stride);
        Ok(ZenAttention {
            q: CausalConv::new(store, &alloc::format!("{name}.q"), c, c, st, st, rng),
            k: CausalConv::new(store, &alloc::format!("{name}.k"), c, c, st, st, rng),
            v: CausalConv::new(store, &alloc::format!("{name}.v"), c, c, st, st, rng),
            up: CausalConvTranspose::new(store, &alloc::format!("{name}.up"), c, c, st, st, rng),
            heads,
        })
    }

    /// `(C, 1, N)` to `(C, 1, N)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut AttentionStats) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (c, n) = (s[0], s[2]);
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let m = g.shape(q)[2];
        let dh = c / self.heads;
        let scale = 1.0 / libm::sqrtf(dh as f32);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let head = |g: &mut Graph, t: Var| -> Result<Var> {
                let t = g.slice(t, 0, h * dh, (h + 1) * dh)?;
                g.reshape(t, &[dh, m])
            };
            let qh = head(g, q)?;
            let qh = g.transpose(qh)?;
            let kh = head(g, k)?;
            let vh = head(g, v)?;
            let vh = g.transpose(vh)?;
            let scores = g.matmul(qh, kh)?;
            let scores = g.scale(scores, scale);
            let scores = g.causal_mask(scores)?;
            let attn = g.softmax_lastdim(scores)?;
            let o = g.matmul(attn, vh)?;
            outs.push(g.transpose(o)?);
        }
        stats.entries += (m * m * self.heads) as u64;
        stats.dense_entries += (n * n * self.heads) as u64;
        let o = g.concat_axis0(&outs)?;
        let o = g.reshape(o, &[c, 1, m])?;
        let o = self.up.forward(g, p, o, n)?;
        g.add(x, o)
    }
}

/// Autoregressive prior over raster-scanned code grids.
#[derive(Clone, Debug)]
pub struct SnailModel {
    pub config: SnailConfig,
    pub params: ParamStore,
    token_embed: ParamId,
    category_embed: ParamId,
    blocks: Vec<(GatedCausal, ZenAttention)>,
    position: Vec<CausalConv>,
    head: CausalConv,
}

impl SnailModel {
    pub fn new<R: Rng + ?Sized>(config: SnailConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut store = ParamStore::new();
        let s = &mut store;
        let token_embed = s.add(
            "token_embed",
            Tensor::uniform(&[config.codebook_size + 1, c], 1.0, rng),
        );
        let category_embed = s.add("category_embed", Tensor::uniform(&[NUM_CATEGORIES, c], 1.0, rng));
        let st = config.zen_stride;
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut position = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            position.push(CausalConv::new(s, &alloc::format!("block{b}.position"), 2, c, 1, 1, rng));
            let gated = GatedCausal::new(s, &alloc::format!("block{b}"), c, config.kernel, rng);
            let zen = ZenAttention::new(s, &alloc::format!("block{b}.zen"), c, st, config.heads, rng)?;
            blocks.push((gated, zen));
        }
        let head = CausalConv::zeros(s, "head", c, config.codebook_size, 1);
        Ok(SnailModel {
            config,
            params: store,
            token_embed,
            category_embed,
            blocks,
            position,
            head,
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Decoder input for a token sequence: the start token followed by all
    /// but the last token.
    pub fn shifted(&self, tokens: &[usize]) -> Vec<usize> {
        let mut input = Vec::with_capacity(tokens.len());
        input.push(self.config.start_token());
        input.extend_from_slice(&tokens[..tokens.len().saturating_sub(1)]);
        input
    }

    /// Input embeddings `(C, 1, n)` for already-shifted `input` tokens.
    pub fn embed_var(&self, g: &mut Graph, p: &Bound, input: &[usize]) -> Result<Var> {
        if input.is_empty() {
            return Err(Error::contract("empty token sequence"));
        }
        let e = g.embed_lookup(input, p.var(self.token_embed))?;
        let e = g.transpose(e)?;
        g.reshape(e, &[self.config.channels, 1, input.len()])
    }

    /// Row and column of each predicted cell, centred in [-0.5, 0.5): `(2, 1, n)`.
    /// Lets the prior tell apart positions whose token context is identical.
    fn background(&self, n: usize) -> Tensor {
        let (rows, cols) = (self.config.grid_rows, self.config.grid_cols);
        let mut data = Vec::with_capacity(2 * n);
        data.extend((0..n).map(|t| (t / cols) as f32 / rows as f32 - 0.5));
        data.extend((0..n).map(|t| (t % cols) as f32 / cols as f32 - 0.5));
        Tensor::new(&[2, 1, n], data).expect("background shape")
    }

    /// Logits `(n, K)` from input embeddings `(C, 1, n)`. Row `t` depends only
    /// on embedding columns `0..=t`.
    pub fn logits_from_embedding(
        &self,
        g: &mut Graph,
        p: &Bound,
        h: Var,
        label: CategoryLabel,
        stats: &mut AttentionStats,
    ) -> Result<Var> {
        let c = self.config.channels;
        let n = g.shape(h)[2];
        let cat = g.embed_lookup(&[label.id()], p.var(self.category_embed))?;
        let cat = g.reshape(cat, &[c, 1, 1])?;
        let background = g.input(self.background(n));
        let mut h = h;
        for ((gated, zen), position) in self.blocks.iter().zip(&self.position) {
            h = g.add(h, cat)?;
            let pos = position.forward(g, p, background)?;
            h = g.add(h, pos)?;
            h = gated.forward(g, p, h)?;
            h = zen.forward(g, p, h, stats)?;
        }
        let h = g.elu(h);
        let out = self.head.forward(g, p, h)?;
        let out = g.reshape(out, &[self.config.codebook_size, n])?;
        g.transpose(out)
    }

    /// Next-token logits `(n, K)` for a (possibly partial) raster sequence:
    /// row `t` is the distribution of `tokens[t]` given `tokens[..t]`.
    pub fn logits_var(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &[usize],
        label: CategoryLabel,
        stats: &mut AttentionStats,
    ) -> Result<Var> {
        if tokens.len() > self.config.seq_len() {
            return Err(Error::dim("snail_logits", &[tokens.len()], &[self.config.seq_len()]));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.codebook_size) {
            return Err(Error::contract(alloc::format!(
                "token {bad} outside codebook of {}",
                self.config.codebook_size
            )));
        }
        let input = self.shifted(tokens);
        let h = self.embed_var(g, p, &input)?;
        self.logits_from_embedding(g, p, h, label, stats)
    }

    pub fn logits(&self, tokens: &[usize], label: CategoryLabel) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let l = self.logits_var(&mut g, &p, tokens, label, &mut AttentionStats::default())?;
        Ok(g.value(l).clone())
    }
}
