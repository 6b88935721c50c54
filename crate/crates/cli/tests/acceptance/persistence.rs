use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use zenfoley::checkpoint::Checkpoint;
use zenfoley::config::RunConfig;
use zenfoley::core::nn::Adam;
use zenfoley::core::snail::{SnailExample, SnailModel};
use zenfoley::core::vqvae::{VqExample, VqVae};
use zenfoley::core::{CategoryLabel, Tensor};
use zenfoley::formats::read_codes;
use zenfoley::pipeline::{
    self, checkpoint_path, corpus_stats, final_checkpoint, load_cembed, load_snail, load_vq, Layout,
};

use crate::fd::rng;
use crate::{corpus, ctx, ensure, Outcome};

/// Checkpoint step resumed from, and the extra steps run after it.
const RESUME_AT: u64 = 20;
const EXTRA: u64 = 10;

struct Run {
    vq_total: f64,
    vq_recon: f64,
    nll: f64,
}

fn pipeline_run(cfg: &RunConfig, out: &Path) -> Result<Run, String> {
    ctx(pipeline::split(cfg, 7, out), "split")?;
    ctx(pipeline::prepare(cfg, 7, out), "prepare")?;
    let vq = ctx(pipeline::train_vqvae(cfg, 7, out, None), "train vq-vae")?;
    ctx(pipeline::extract_codes(cfg, 7, out), "extract codes")?;
    let prior = ctx(pipeline::train_snail(cfg, 7, out, None), "train prior")?;
    ctx(pipeline::generate(cfg, 7, out), "generate")?;
    ctx(pipeline::evaluate(cfg, 7, out), "evaluate")?;
    Ok(Run {
        vq_total: vq.final_loss.total,
        vq_recon: vq.final_loss.reconstruction,
        nll: prior.final_nll,
    })
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let (ta, tb) = (tree(a), tree(b));
    ensure(ta.keys().eq(tb.keys()), || "runs wrote different file sets".into())?;
    for (k, v) in &ta {
        ensure(&tb[k] == v, || format!("{} differs between runs", k.display()))?;
    }
    for must in ["cache/00000.cem", "vqvae/final.zfck", "snail/final.zfck", "report.tsv"] {
        ensure(ta.contains_key(Path::new(must)), || format!("{must} missing"))?;
    }
    ensure(ta.keys().any(|k| k.extension().is_some_and(|e| e == "wav")), || {
        "no generated audio".into()
    })?;
    Ok(ta.len())
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Outputs on a fixed probe batch are bit-identical after a save and load
/// into a differently initialised model, including optimizer state.
fn round_trip(cfg: &RunConfig, out: &Path, scratch: &Path) -> Result<(), String> {
    let layout = Layout::new(out);
    let stats = ctx(corpus_stats(&layout), "stats")?;
    let probe: Vec<Tensor> = (0..4)
        .map(|i| load_cembed(&layout, cfg, &stats, i).map(|c| c.values))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let label = CategoryLabel::new(0).unwrap();

    let mut vq = ctx(load_vq(cfg, &final_checkpoint(&layout.vq_dir())), "load vq-vae")?;
    let mut opt = Adam::new(&vq.params);
    let batch: Vec<VqExample> = probe.iter().map(|x| VqExample { id: 0, input: x, label }).collect();
    for step in 0..3 {
        ctx(vq.train_step(&mut opt, &batch, 1e-3, Some(1.0), step), "vq step")?;
    }
    let vq_out = |m: &VqVae| -> Result<Vec<Vec<u32>>, String> {
        let mut v = Vec::new();
        for x in &probe {
            v.push(bits(&ctx(m.reconstruct(x), "reconstruct")?));
            v.push(bits(&ctx(m.classify_latent(&ctx(m.encode(x), "encode")?), "classify")?));
        }
        Ok(v)
    };
    let path = scratch.join("vq.zfck");
    ctx(Checkpoint::capture(cfg.vq_hash(), 3, &vq.params, &opt, &vq.usage).save(&path), "save")?;
    let mut back = ctx(VqVae::new(cfg.vq.clone(), &mut rng(99)), "fresh vq-vae")?;
    let ck = ctx(Checkpoint::load(&path), "load")?;
    let mut opt2 = ctx(ck.restore(&mut back.params), "restore")?;
    ensure(vq_out(&vq)? == vq_out(&back)?, || "VQ-VAE probe outputs changed across save/load".into())?;
    // The optimizer state came back too: one more identical step stays identical.
    ctx(vq.train_step(&mut opt, &batch, 1e-3, Some(1.0), 3), "vq step")?;
    ctx(back.train_step(&mut opt2, &batch, 1e-3, Some(1.0), 3), "vq step")?;
    ensure(vq_out(&vq)? == vq_out(&back)?, || "optimizer state changed across save/load".into())?;

    let prior = ctx(load_snail(cfg, &final_checkpoint(&layout.snail_dir())), "load prior")?;
    let grids: Vec<_> = (0..4)
        .map(|i| read_codes(&layout.codes(i)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let prior_out = |m: &SnailModel| -> Result<Vec<Vec<u32>>, String> {
        grids
            .iter()
            .map(|(g, l)| ctx(m.logits(g.raster(), *l), "logits").map(|t| bits(&t)))
            .collect()
    };
    let mut trained = prior.clone();
    let mut opt = Adam::new(&trained.params);
    let batch: Vec<SnailExample> =
        grids.iter().map(|(g, l)| SnailExample { id: 0, codes: g, label: *l }).collect();
    ctx(trained.train_step(&mut opt, &batch, 1e-3, Some(1.0), 0), "prior step")?;
    let path = scratch.join("prior.zfck");
    ctx(Checkpoint::capture(cfg.snail_hash(), 1, &trained.params, &opt, &[]).save(&path), "save")?;
    let mut back = ctx(SnailModel::new(cfg.snail.clone(), &mut rng(98)), "fresh prior")?;
    ctx(ctx(Checkpoint::load(&path), "load")?.restore(&mut back.params), "restore")?;
    ensure(prior_out(&trained)? == prior_out(&back)?, || "prior logits changed across save/load".into())?;
    Ok(())
}

/// Resuming from the step-`RESUME_AT` checkpoint of a finished run and
/// running `EXTRA` more steps gives the same bytes as an uninterrupted run.
fn resume(dir: &Path, manifest: &Path, from: &Path) -> Result<(), String> {
    let stop = RESUME_AT + EXTRA;
    let extra = format!("vq.max_steps = {stop}\nsnail.max_steps = {stop}\ncheckpoint.interval = {RESUME_AT}\n");
    fs::create_dir_all(dir).unwrap();
    let cfg = ctx(RunConfig::load(&corpus::config(dir, manifest, &extra)), "config")?;
    let (straight, resumed) = (dir.join("straight"), dir.join("resumed"));
    let prepared = |out: &Path| -> Result<(), String> {
        for sub in ["cache", "codes"] {
            fs::create_dir_all(out.join(sub)).unwrap();
            for e in fs::read_dir(from.join(sub)).unwrap() {
                let p = e.unwrap().path();
                fs::copy(&p, out.join(sub).join(p.file_name().unwrap())).unwrap();
            }
        }
        for f in ["manifest.tsv", "corpus_stats.txt"] {
            fs::copy(from.join(f), out.join(f)).unwrap();
        }
        Ok(())
    };
    prepared(&straight)?;
    prepared(&resumed)?;
    for (stage, sub) in [("vq-vae", "vqvae"), ("prior", "snail")] {
        let train = |out: &Path, ck: Option<&Path>| {
            if stage == "vq-vae" {
                pipeline::train_vqvae(&cfg, 7, out, ck).map(|_| ())
            } else {
                pipeline::train_snail(&cfg, 7, out, ck).map(|_| ())
            }
        };
        let rdir = resumed.join(sub);
        fs::create_dir_all(&rdir).unwrap();
        let ck = checkpoint_path(&from.join(sub), RESUME_AT);
        fs::copy(from.join(sub).join("log.jsonl"), rdir.join("log.jsonl")).unwrap();
        let (a, b) = thread::scope(|s| {
            let a = s.spawn(|| train(&straight, None));
            let b = train(&resumed, Some(&ck));
            (a.join().expect("uninterrupted run"), b)
        });
        ctx(a, &format!("{stage} uninterrupted"))?;
        ctx(b, &format!("{stage} resumed"))?;
        for f in ["final.zfck", "log.jsonl"] {
            let (x, y) = (fs::read(straight.join(sub).join(f)).unwrap(), fs::read(rdir.join(f)).unwrap());
            ensure(x == y, || format!("{stage} {f} differs after resuming at step {RESUME_AT}"))?;
        }
        let step = ctx(Checkpoint::load(&final_checkpoint(&rdir)), "final")?.step;
        ensure(step == stop, || format!("{stage} resumed run ended at step {step}"))?;
    }
    Ok(())
}

pub fn run() -> Outcome {
    let root = ctx(tempfile::tempdir(), "temp dir")?;
    let data = root.path().join("corpus");
    fs::create_dir_all(&data).unwrap();
    let manifest = corpus::write(&data, 28, 3);
    let cfg_path = corpus::config(root.path(), &manifest, &format!("checkpoint.interval = {RESUME_AT}\n"));
    let cfg = ctx(RunConfig::load(&cfg_path), "config")?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let (ra, rb) = thread::scope(|s| {
        let other = s.spawn(|| pipeline_run(&cfg, &b));
        let ra = pipeline_run(&cfg, &a);
        (ra, other.join().unwrap_or_else(|_| Err("second run panicked".into())))
    });
    let (ra, rb) = (ra?, rb?);
    ensure(
        ra.vq_total.to_bits() == rb.vq_total.to_bits()
            && ra.vq_recon.to_bits() == rb.vq_recon.to_bits()
            && ra.nll.to_bits() == rb.nll.to_bits(),
        || "final losses differ between runs".into(),
    )?;
    let files = same_tree(&a, &b)?;

    round_trip(&cfg, &a, root.path())?;
    resume(&root.path().join("resume"), &manifest, &a)?;
    Ok(format!(
        "two seeded desk pipelines wrote {files} byte-identical files (final VQ loss {:.5}, NLL {:.4}); \
         save/load bit-exact; resume at {RESUME_AT} +{EXTRA} matches",
        ra.vq_total, ra.nll
    ))
}
