//! Plain-text run configuration.
//!
//! One `key = value` per line; `#` starts a comment. `preset` (`desk` or
//! `full`) picks the defaults, every other key overrides one field. Unknown
//! or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use zenfoley_core::frontend::{MaskSpec, MelParams, FEATURE_ROWS, SOURCE_RATE};
use zenfoley_core::snail::SnailConfig;
use zenfoley_core::vqvae::VqConfig;

use crate::error::{PipelineError, Result};
use crate::formats::read_bytes;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    /// Deterministic pseudo-random features seeded per clip.
    Stub,
    /// A `CFE1` file beside each clip, same stem, extension `cfe`.
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FadBackend {
    SpectralStats,
    /// A `CFE1` embedding beside each clip, flattened row-major.
    Precomputed,
}

impl FadBackend {
    pub fn as_str(self) -> &'static str {
        match self {
            FadBackend::SpectralStats => "spectral-stats",
            FadBackend::Precomputed => "precomputed",
        }
    }
}

/// Batch size, clipping and run length shared by both training loops.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub epochs: u64,
    /// Stops early once this many steps have run; 0 means no cap.
    pub max_steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSettings {
    pub time_max_frames: usize,
    pub freq_max_rows: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub manifest: Option<PathBuf>,
    pub source_rate: u32,
    pub clip_seconds: u32,
    pub mel: MelParams,
    pub features: FeatureSource,
    pub feature_rows: usize,
    pub vq: VqConfig,
    pub vq_train: TrainSettings,
    pub vq_lr: f64,
    pub mask: MaskSettings,
    pub snail: SnailConfig,
    pub snail_train: TrainSettings,
    pub snail_base_lr: f64,
    pub snail_max_lr: f64,
    pub snail_cycle_steps: u64,
    pub per_class_val: usize,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
    pub per_class: usize,
    pub temperature: f64,
    pub griffin_lim_iters: usize,
    pub fad_backend: FadBackend,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (mel, feature_rows, vq, snail) = match preset {
            Preset::Full => (
                MelParams::default(),
                FEATURE_ROWS,
                VqConfig::full_scale(),
                SnailConfig::full_scale(),
            ),
            Preset::Desk => (
                MelParams {
                    n_mels: 16,
                    fft_size: 2048,
                    hop: 1500,
                    ..MelParams::default()
                },
                16,
                VqConfig::desk(),
                SnailConfig::desk(),
            ),
        };
        let desk = preset == Preset::Desk;
        let mut cfg = RunConfig {
            preset,
            manifest: None,
            source_rate: SOURCE_RATE,
            clip_seconds: 4,
            mel,
            features: FeatureSource::Stub,
            feature_rows,
            vq,
            vq_train: TrainSettings {
                batch_size: 16,
                max_grad_norm: 1.0,
                epochs: if desk { 1000 } else { 800 },
                max_steps: if desk { 200 } else { 0 },
            },
            vq_lr: 3e-3,
            mask: if desk {
                MaskSettings {
                    time_max_frames: 8,
                    freq_max_rows: 2,
                    count: 1,
                }
            } else {
                MaskSettings {
                    time_max_frames: 30,
                    freq_max_rows: 12,
                    count: 2,
                }
            },
            snail,
            snail_train: TrainSettings {
                batch_size: 8,
                max_grad_norm: 1.0,
                epochs: if desk { 1000 } else { 265 },
                max_steps: if desk { 200 } else { 0 },
            },
            snail_base_lr: if desk { 3e-4 } else { 1e-5 },
            snail_max_lr: if desk { 3e-3 } else { 1e-4 },
            snail_cycle_steps: if desk { 100 } else { 2000 },
            per_class_val: if desk { 2 } else { 35 },
            log_interval: 10,
            checkpoint_interval: if desk { 100 } else { 1000 },
            per_class: if desk { 2 } else { 32 },
            temperature: 1.0,
            griffin_lim_iters: 32,
            fad_backend: FadBackend::SpectralStats,
        };
        cfg.sync_derived();
        cfg
    }

    /// Input, latent and grid extents follow the audio and feature settings.
    fn sync_derived(&mut self) {
        self.vq.mel_rows = self.mel.n_mels;
        self.vq.in_rows = self.mel.n_mels + self.feature_rows;
        self.vq.in_frames = self.frames();
        self.snail.codebook_size = self.vq.codebook_size;
        self.snail.grid_rows = self.vq.latent_rows();
        self.snail.grid_cols = self.vq.latent_frames();
    }

    pub fn model_samples(&self) -> usize {
        (self.mel.sample_rate * self.clip_seconds) as usize
    }

    pub fn frames(&self) -> usize {
        self.model_samples() / self.mel.hop.max(1)
    }

    pub fn mask_spec(&self, seed: u64) -> MaskSpec {
        MaskSpec {
            time_mask_max_frames: self.mask.time_max_frames,
            freq_mask_max_rows: self.mask.freq_max_rows,
            num_masks_per_kind: self.mask.count,
            seed,
        }
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if let Some((first, _)) = pairs.get(&k) {
                return Err(PipelineError::Config(format!(
                    "line {}: key {k} already set on line {first}",
                    n + 1
                )));
            }
            pairs.insert(k, (n + 1, v));
        }
        let preset = match pairs.remove("preset").map(|(_, v)| v).as_deref() {
            None | Some("desk") => Preset::Desk,
            Some("full") => Preset::Full,
            Some(other) => return Err(PipelineError::Config(format!("unknown preset {other:?}"))),
        };
        let mut cfg = RunConfig::preset(preset);
        for (key, (line, value)) in &pairs {
            cfg.set(key, value, base)
                .map_err(|e| PipelineError::Config(format!("line {line}: {e}")))?;
        }
        cfg.sync_derived();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8_lossy(&read_bytes(path)?).into_owned();
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("{key}: expected true or false, got {v:?}")),
            }
        }
        match key {
            "data.manifest" => self.manifest = Some(base.join(v)),
            "audio.source_rate" => self.source_rate = num(key, v)?,
            "audio.model_rate" => self.mel.sample_rate = num(key, v)?,
            "audio.clip_seconds" => self.clip_seconds = num(key, v)?,
            "mel.n_mels" => self.mel.n_mels = num(key, v)?,
            "mel.fft_size" => self.mel.fft_size = num(key, v)?,
            "mel.hop" => self.mel.hop = num(key, v)?,
            "mel.f_min" => self.mel.f_min = num(key, v)?,
            "mel.f_max" => self.mel.f_max = num(key, v)?,
            "mel.floor" => self.mel.floor = num(key, v)?,
            "features.source" => {
                self.features = match v {
                    "stub" => FeatureSource::Stub,
                    "file" => FeatureSource::File,
                    _ => return Err(format!("{key}: expected stub or file, got {v:?}")),
                }
            }
            "features.rows" => self.feature_rows = num(key, v)?,
            "vq.channels" => self.vq.channels = num(key, v)?,
            "vq.embed_dim" => self.vq.embed_dim = num(key, v)?,
            "vq.codebook_size" => self.vq.codebook_size = num(key, v)?,
            "vq.residual_blocks" => self.vq.residual_blocks = num(key, v)?,
            "vq.parallel_block" => self.vq.parallel_block = flag(key, v)?,
            "vq.beta" => self.vq.beta = num(key, v)?,
            "vq.class_weight" => self.vq.class_weight = num(key, v)?,
            "vq.lr" => self.vq_lr = num(key, v)?,
            "vq.batch_size" => self.vq_train.batch_size = num(key, v)?,
            "vq.max_grad_norm" => self.vq_train.max_grad_norm = num(key, v)?,
            "vq.epochs" => self.vq_train.epochs = num(key, v)?,
            "vq.max_steps" => self.vq_train.max_steps = num(key, v)?,
            "mask.time_max_frames" => self.mask.time_max_frames = num(key, v)?,
            "mask.freq_max_rows" => self.mask.freq_max_rows = num(key, v)?,
            "mask.count" => self.mask.count = num(key, v)?,
            "snail.channels" => self.snail.channels = num(key, v)?,
            "snail.blocks" => self.snail.blocks = num(key, v)?,
            "snail.kernel" => self.snail.kernel = num(key, v)?,
            "snail.zen_stride" => self.snail.zen_stride = num(key, v)?,
            "snail.heads" => self.snail.heads = num(key, v)?,
            "snail.batch_size" => self.snail_train.batch_size = num(key, v)?,
            "snail.max_grad_norm" => self.snail_train.max_grad_norm = num(key, v)?,
            "snail.epochs" => self.snail_train.epochs = num(key, v)?,
            "snail.max_steps" => self.snail_train.max_steps = num(key, v)?,
            "snail.base_lr" => {
                self.snail_base_lr = num(key, v)?;
                self.snail_max_lr = 10.0 * self.snail_base_lr;
            }
            "snail.max_lr" => self.snail_max_lr = num(key, v)?,
            "snail.cycle_steps" => self.snail_cycle_steps = num(key, v)?,
            "split.per_class_val" => self.per_class_val = num(key, v)?,
            "log.interval" => self.log_interval = num(key, v)?,
            "checkpoint.interval" => self.checkpoint_interval = num(key, v)?,
            "generate.per_class" => self.per_class = num(key, v)?,
            "generate.temperature" => self.temperature = num(key, v)?,
            "generate.griffin_lim_iters" => self.griffin_lim_iters = num(key, v)?,
            "fad.backend" => {
                self.fad_backend = match v {
                    "spectral-stats" => FadBackend::SpectralStats,
                    "precomputed" => FadBackend::Precomputed,
                    _ => return Err(format!("{key}: expected spectral-stats or precomputed")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.mel.validate()?;
        if self.source_rate == 0 || self.clip_seconds == 0 {
            return bad("audio rates and clip length must be positive".into());
        }
        if self.feature_rows == 0 {
            return bad("features.rows must be positive".into());
        }
        self.vq.validate()?;
        self.snail.validate()?;
        for (name, t) in [("vq", &self.vq_train), ("snail", &self.snail_train)] {
            if t.batch_size == 0 || t.epochs == 0 {
                return bad(format!("{name}: batch size and epochs must be positive"));
            }
            if !(t.max_grad_norm > 0.0) {
                return bad(format!("{name}: max_grad_norm must be positive"));
            }
        }
        if !(self.vq_lr >= 0.0) {
            return bad("vq.lr must be non-negative".into());
        }
        zenfoley_core::schedule::CyclicLr::new(
            self.snail_base_lr,
            self.snail_max_lr,
            self.snail_cycle_steps,
        )?;
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return bad("log and checkpoint intervals must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad("generate.temperature must be positive".into());
        }
        let m = &self.mask;
        if m.count > 0
            && (m.time_max_frames > self.frames()
                || m.freq_max_rows > self.mel.n_mels.min(self.feature_rows))
        {
            return bad("mask extents exceed a sub-band".into());
        }
        Ok(())
    }

    fn canonical(&self, keys: &[(&str, String)]) -> u64 {
        let mut h = Sha256::new();
        for (k, v) in keys {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    /// Hash of everything that shapes the VQ-VAE and its training trajectory.
    /// Run length, logging and generation settings are left out so a run can
    /// be extended from a checkpoint.
    pub fn vq_hash(&self) -> u64 {
        let m = &self.mel;
        self.canonical(&[
            ("mel", format!("{} {} {} {} {} {} {}", m.sample_rate, m.fft_size, m.hop, m.n_mels, m.f_min, m.f_max, m.floor)),
            ("audio", format!("{} {}", self.source_rate, self.clip_seconds)),
            ("features", format!("{:?} {}", self.features, self.feature_rows)),
            ("vq", format!("{:?}", self.vq)),
            ("vq.train", format!("{} {} {}", self.vq_train.batch_size, self.vq_train.max_grad_norm, self.vq_lr)),
            ("mask", format!("{:?}", self.mask)),
        ])
    }

    /// Hash of the prior and the VQ-VAE whose codes it models.
    pub fn snail_hash(&self) -> u64 {
        self.canonical(&[
            ("vq", format!("{:016x}", self.vq_hash())),
            ("snail", format!("{:?}", self.snail)),
            (
                "snail.train",
                format!(
                    "{} {} {} {} {}",
                    self.snail_train.batch_size,
                    self.snail_train.max_grad_norm,
                    self.snail_base_lr,
                    self.snail_max_lr,
                    self.snail_cycle_steps
                ),
            ),
        ])
    }
}
