use alloc::vec::Vec;

use rand::Rng;

use crate::category::NUM_CATEGORIES;
use crate::codes::CodeGrid;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bound, Conv2d, ConvTranspose2d, Linear, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::quantize::quantize;

/// Total downsampling of the encoder along each axis.
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct VqConfig {
    pub in_rows: usize,
    pub in_frames: usize,
    pub mel_rows: usize,
    /// Hidden width of the encoder and decoder trunks.
    pub channels: usize,
    /// Codeword dimension `D`.
    pub embed_dim: usize,
    pub codebook_size: usize,
    pub residual_blocks: usize,
    pub parallel_block: bool,
    pub beta: f32,
    /// Weight of the category cross-entropy in the total loss.
    pub class_weight: f32,
}

impl VqConfig {
    pub fn full_scale() -> Self {
        VqConfig {
            in_rows: 1152,
            in_frames: 300,
            mel_rows: 129,
            channels: 128,
            embed_dim: 128,
            codebook_size: 1024,
            residual_blocks: 2,
            parallel_block: true,
            beta: 0.25,
            class_weight: 0.01,
        }
    }

    pub fn desk() -> Self {
        VqConfig {
            in_rows: 32,
            in_frames: 64,
            mel_rows: 16,
            channels: 32,
            embed_dim: 64,
            codebook_size: 128,
            residual_blocks: 1,
            parallel_block: true,
            beta: 0.25,
            class_weight: 0.01,
        }
    }

    pub fn latent_rows(&self) -> usize {
        self.in_rows / DOWNSAMPLE
    }

    pub fn latent_frames(&self) -> usize {
        self.in_frames / DOWNSAMPLE
    }

    /// `(D, rows/4, frames/4)`.
    pub fn latent_shape(&self) -> [usize; 3] {
        [self.embed_dim, self.latent_rows(), self.latent_frames()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::config(alloc::format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.class_weight < 0.0 || !self.class_weight.is_finite() {
            return Err(Error::config("class weight must be >= 0"));
        }
        if self.in_rows == 0
            || self.in_frames == 0
            || self.in_rows % DOWNSAMPLE != 0
            || self.in_frames % DOWNSAMPLE != 0
        {
            return Err(Error::config(alloc::format!(
                "input ({}, {}) must be positive multiples of {DOWNSAMPLE}",
                self.in_rows,
                self.in_frames
            )));
        }
        if self.mel_rows == 0 || self.mel_rows >= self.in_rows {
            return Err(Error::config("mel rows must be inside the input"));
        }
        if self.channels < 2 || self.embed_dim == 0 || self.codebook_size == 0 {
            return Err(Error::config("channels >= 2, embed_dim and codebook_size > 0 required"));
        }
        Ok(())
    }
}

/// `x + proj(tanh(a) ⊙ σ(b))` with `[a; b] = conv3×3(elu(x))`.
#[derive(Clone, Debug)]
struct GatedResidual {
    conv: Conv2d,
    proj: Conv2d,
    width: usize,
}

impl GatedResidual {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Self {
        GatedResidual {
            conv: Conv2d::new(store, &alloc::format!("{name}.conv"), width, 2 * width, (3, 3), (1, 1), (1, 1), rng),
            proj: Conv2d::new(store, &alloc::format!("{name}.proj"), width, width, (1, 1), (1, 1), (0, 0), rng),
            width,
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let a = g.elu(x);
        let a = self.conv.forward(g, p, a)?;
        let filt = g.slice(a, 0, 0, self.width)?;
        let gate = g.slice(a, 0, self.width, 2 * self.width)?;
        let filt = g.tanh(filt);
        let gate = g.sigmoid(gate);
        let h = g.mul(filt, gate)?;
        let h = self.proj.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// A main residual stack plus an optional parallel stack over the same
/// input; their outputs are summed.
#[derive(Clone, Debug)]
struct Trunk {
    main: Vec<GatedResidual>,
    parallel: Option<Vec<GatedResidual>>,
}

impl Trunk {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        blocks: usize,
        parallel: bool,
        rng: &mut R,
    ) -> Self {
        let mut stack = |tag: &str, rng: &mut R| {
            (0..blocks)
                .map(|i| GatedResidual::new(store, &alloc::format!("{name}.{tag}{i}"), width, rng))
                .collect::<Vec<_>>()
        };
        let main = stack("main", rng);
        let parallel = parallel.then(|| stack("par", rng));
        Trunk { main, parallel }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut m = x;
        for u in &self.main {
            m = u.forward(g, p, m)?;
        }
        let Some(par) = &self.parallel else { return Ok(m) };
        let mut q = x;
        for u in par {
            q = u.forward(g, p, q)?;
        }
        g.add(m, q)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    down1: Conv2d,
    down2: Conv2d,
    mix: Conv2d,
    trunk: Trunk,
    out: Conv2d,
}

#[derive(Clone, Debug)]
pub(crate) struct Decoder {
    inp: Conv2d,
    trunk: Trunk,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
}

/// Class-conditioned VQ-VAE over combined embeddings.
#[derive(Clone, Debug)]
pub struct VqVae {
    pub config: VqConfig,
    pub params: ParamStore,
    pub(crate) encoder: Encoder,
    pub(crate) decoder: Decoder,
    pub(crate) head: Linear,
    pub(crate) codebook: ParamId,
    /// Assignments per codeword since the last dead-code sweep.
    pub usage: Vec<u64>,
}

impl VqVae {
    pub fn new<R: Rng + ?Sized>(config: VqConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let half = (c / 2).max(1);
        let mut store = ParamStore::new();
        let s = &mut store;
        let encoder = Encoder {
            down1: Conv2d::new(s, "enc.down1", 1, half, (4, 4), (2, 2), (1, 1), rng),
            down2: Conv2d::new(s, "enc.down2", half, c, (4, 4), (2, 2), (1, 1), rng),
            mix: Conv2d::new(s, "enc.mix", c, c, (3, 3), (1, 1), (1, 1), rng),
            trunk: Trunk::new(s, "enc.trunk", c, config.residual_blocks, config.parallel_block, rng),
            out: Conv2d::new(s, "enc.out", c, config.embed_dim, (1, 1), (1, 1), (0, 0), rng),
        };
        let k = config.codebook_size;
        let codebook = s.add(
            "codebook",
            Tensor::uniform(&[k, config.embed_dim], 1.0 / k as f32, rng),
        );
        let decoder = Decoder {
            inp: Conv2d::new(s, "dec.in", config.embed_dim, c, (3, 3), (1, 1), (1, 1), rng),
            trunk: Trunk::new(s, "dec.trunk", c, config.residual_blocks, config.parallel_block, rng),
            up1: ConvTranspose2d::new(s, "dec.up1", c, half, (4, 4), (2, 2), (1, 1), rng),
            up2: ConvTranspose2d::new(s, "dec.up2", half, 1, (4, 4), (2, 2), (1, 1), rng),
        };
        let head = Linear::new(s, "class_head", config.embed_dim, NUM_CATEGORIES, rng);
        Ok(VqVae {
            usage: alloc::vec![0; k],
            config,
            params: store,
            encoder,
            decoder,
            head,
            codebook,
        })
    }

    pub fn codewords(&self) -> &Tensor {
        self.params.get(self.codebook)
    }

    pub fn codewords_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.codebook)
    }

    pub fn codebook_param(&self) -> ParamId {
        self.codebook
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn input_shape(&self) -> [usize; 2] {
        [self.config.in_rows, self.config.in_frames]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// `(rows, frames)` input to `z_e` of shape `(D, rows/4, frames/4)`.
    pub fn encode_var(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s != self.input_shape() {
            return Err(Error::dim("encode", &s, &self.input_shape()));
        }
        let h = g.reshape(x, &[1, s[0], s[1]])?;
        let e = &self.encoder;
        let h = e.down1.forward(g, p, h)?;
        let h = g.elu(h);
        let h = e.down2.forward(g, p, h)?;
        let h = g.elu(h);
        let h = e.mix.forward(g, p, h)?;
        let h = e.trunk.forward(g, p, h)?;
        let h = g.elu(h);
        e.out.forward(g, p, h)
    }

    /// `(D, rows/4, frames/4)` latent back to `(rows, frames)`.
    pub fn decode_var(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let s = g.shape(z).to_vec();
        if s != self.config.latent_shape() {
            return Err(Error::dim("decode", &s, &self.config.latent_shape()));
        }
        let d = &self.decoder;
        let h = d.inp.forward(g, p, z)?;
        let h = d.trunk.forward(g, p, h)?;
        let h = g.elu(h);
        let h = d.up1.forward(g, p, h)?;
        let h = g.elu(h);
        let h = d.up2.forward(g, p, h)?;
        g.reshape(h, &self.input_shape())
    }

    /// Channel means of `z_e` through a single linear map: `(1, 7)` logits.
    pub fn classify_var(&self, g: &mut Graph, p: &Bound, z_e: Var) -> Result<Var> {
        let s = g.shape(z_e).to_vec();
        if s.len() != 3 || s[0] != self.config.embed_dim {
            return Err(Error::dim("classify_latent", &s, &[self.config.embed_dim]));
        }
        let flat = g.reshape(z_e, &[s[0], s[1] * s[2]])?;
        let means = g.mean_lastdim(flat)?;
        let row = g.reshape(means, &[1, s[0]])?;
        self.head.forward(g, p, row)
    }

    /// `(n, D)` codeword rows for `indices`, laid out as a `(D, rows, cols)`
    /// latent. Gradients flow to the codebook.
    pub fn lookup_var(&self, g: &mut Graph, p: &Bound, grid: &CodeGrid) -> Result<Var> {
        let rows = g.embed_lookup(grid.raster(), p.var(self.codebook))?;
        let t = g.transpose(rows)?;
        g.reshape(t, &[self.config.embed_dim, grid.rows(), grid.cols()])
    }

    fn run<T>(&self, f: impl FnOnce(&mut Graph, &Bound) -> Result<T>) -> Result<T> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        f(&mut g, &p)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.run(|g, p| {
            let xv = g.input(x.clone());
            let z = self.encode_var(g, p, xv)?;
            Ok(g.value(z).clone())
        })
    }

    pub fn decode(&self, z_q: &Tensor) -> Result<Tensor> {
        self.run(|g, p| {
            let zv = g.input(z_q.clone());
            let r = self.decode_var(g, p, zv)?;
            Ok(g.value(r).clone())
        })
    }

    pub fn classify_latent(&self, z_e: &Tensor) -> Result<Tensor> {
        self.run(|g, p| {
            let zv = g.input(z_e.clone());
            let l = self.classify_var(g, p, zv)?;
            Ok(g.value(l).clone().reshape(&[NUM_CATEGORIES])?)
        })
    }

    pub fn quantize(&self, z_e: &Tensor) -> Result<(Tensor, CodeGrid)> {
        quantize(z_e, self.codewords())
    }

    /// Encoder output snapped to the codebook, as an index grid.
    pub fn codes(&self, x: &Tensor) -> Result<CodeGrid> {
        Ok(self.quantize(&self.encode(x)?)?.1)
    }

    /// Codewords for `grid`, decoded.
    pub fn decode_codes(&self, grid: &CodeGrid) -> Result<Tensor> {
        let [_, r, c] = self.config.latent_shape();
        if (grid.rows(), grid.cols()) != (r, c) {
            return Err(Error::dim("decode_codes", &[grid.rows(), grid.cols()], &[r, c]));
        }
        if grid.max_index() >= self.config.codebook_size {
            return Err(Error::contract(alloc::format!(
                "code {} outside codebook of {}",
                grid.max_index(),
                self.config.codebook_size
            )));
        }
        self.run(|g, p| {
            let z = self.lookup_var(g, p, grid)?;
            let r = self.decode_var(g, p, z)?;
            Ok(g.value(r).clone())
        })
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (z_q, _) = self.quantize(&self.encode(x)?)?;
        self.decode(&z_q)
    }
}
