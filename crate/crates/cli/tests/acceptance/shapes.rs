use std::f32::consts::TAU;

use zenfoley::config::{Preset, RunConfig};
use zenfoley::core::frontend::{invert_mel, melspectrogram, resample, CEmbed, MelSpec, Waveform, SOURCE_RATE};
use zenfoley::core::vqvae::VqVae;
use zenfoley::pipeline::prepare_clip;
use zenfoley::wav::{read_wav, write_wav};

use crate::fd::rng;
use crate::{ctx, ensure, Outcome};

fn expect(what: &str, got: &[usize], want: &[usize]) -> Result<(), String> {
    ensure(got == want, || format!("{what}: {got:?}, expected {want:?}"))
}

/// Full-scale geometry with narrow channels: every extent checked here
/// depends on the geometry alone.
pub fn run() -> Outcome {
    let cfg = RunConfig::preset(Preset::Full);
    let dir = ctx(tempfile::tempdir(), "temp dir")?;
    let path = dir.path().join("tone.wav");
    let n = (SOURCE_RATE * 4) as usize;
    let tone = (0..n).map(|i| 0.3 * (TAU * 440.0 * i as f32 / SOURCE_RATE as f32).sin()).collect();
    ctx(write_wav(&path, &Waveform::new(tone, SOURCE_RATE)), "write wav")?;

    let w = ctx(read_wav(&path), "read wav")?;
    let w = ctx(resample(&w, cfg.mel.sample_rate), "resample")?;
    let mel = ctx(melspectrogram(&w, &cfg.mel), "mel")?;
    expect("mel", mel.values.shape(), &[129, 300])?;

    let (features, cembed) = ctx(prepare_clip(&cfg, 0, 0, &path), "prepare")?;
    expect("external features", features.values.shape(), &[1023, 300])?;
    expect("CEmbed", cembed.values.shape(), &[1152, 300])?;
    ensure(cembed.mel_part() == mel.values, || "CEmbed mel rows differ from the mel".into())?;

    let mut vq = cfg.vq.clone();
    vq.channels = 2;
    vq.embed_dim = 2;
    vq.codebook_size = 4;
    vq.residual_blocks = 1;
    let model = ctx(VqVae::new(vq, &mut rng(0)), "vq-vae")?;
    let z = ctx(model.encode(&cembed.values), "encode")?;
    expect("latent", &z.shape()[1..], &[288, 75])?;
    let grid = ctx(model.codes(&cembed.values), "codes")?;
    expect("code grid", &[grid.rows(), grid.cols()], &[cfg.snail.grid_rows, cfg.snail.grid_cols])?;
    expect("prior grid", &[cfg.snail.grid_rows, cfg.snail.grid_cols], &[288, 75])?;

    let decoded = ctx(model.decode_codes(&grid), "decode")?;
    expect("decoded CEmbed", decoded.shape(), &[1152, 300])?;
    let decoded = ctx(CEmbed::new(decoded, cfg.mel.n_mels), "split decoded")?;
    let audio = ctx(
        invert_mel(&MelSpec { values: decoded.mel_part(), params: cfg.mel }, 0),
        "invert",
    )?;
    let out = dir.path().join("out.wav");
    ctx(write_wav(&out, &audio), "write output")?;
    let back = ctx(read_wav(&out), "read output")?;
    expect("audio", &[back.samples.len()], &[96_000])?;
    Ok("mel (129,300), features (1023,300), CEmbed (1152,300), latent (·,288,75), audio 96000".into())
}
