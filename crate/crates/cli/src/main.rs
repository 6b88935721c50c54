use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zenfoley::pipeline::{self, Layout};
use zenfoley::{PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "zenfoley", version, about = "Class-conditional foley synthesis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (key = value lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Work directory shared by all stages.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Training {
    #[command(flatten)]
    common: Common,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tag the input manifest with train and validation splits.
    Split(Common),
    /// Compute feature and CEmbed caches plus corpus statistics.
    Prepare(Common),
    TrainVqvae(Training),
    /// Encode every prepared clip to a code grid.
    ExtractCodes(Common),
    TrainSnail(Training),
    /// Sample foleys for every category.
    Generate(Common),
    /// FAD of generated clips against the validation split.
    Evaluate(Common),
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let load = |c: &Common| RunConfig::load(&c.config);
    match cli.command {
        Command::Split(c) => {
            let (train, val) = pipeline::split(&load(&c)?, c.seed, &c.out)?;
            println!("train {train} val {val}");
        }
        Command::Prepare(c) => {
            let s = pipeline::prepare(&load(&c)?, c.seed, &c.out)?;
            println!("prepared {} clips", s.clips);
        }
        Command::TrainVqvae(t) => {
            let c = &t.common;
            let s = pipeline::train_vqvae(&load(c)?, c.seed, &c.out, t.resume.as_deref())?;
            println!(
                "vq-vae: {} steps, reconstruction {:.5} -> {:.5}",
                s.steps, s.initial.reconstruction, s.final_loss.reconstruction
            );
        }
        Command::ExtractCodes(c) => {
            let n = pipeline::extract_codes(&load(&c)?, c.seed, &c.out)?;
            println!("wrote {n} code grids");
        }
        Command::TrainSnail(t) => {
            let c = &t.common;
            let s = pipeline::train_snail(&load(c)?, c.seed, &c.out, t.resume.as_deref())?;
            println!("prior: {} steps, nll {:.4} -> {:.4}", s.steps, s.initial_nll, s.final_nll);
        }
        Command::Generate(c) => {
            let s = pipeline::generate(&load(&c)?, c.seed, &c.out)?;
            println!(
                "generated {} clips under {}",
                s.files,
                Layout::new(&c.out).generated_dir().display()
            );
        }
        Command::Evaluate(c) => {
            let r = pipeline::evaluate(&load(&c)?, c.seed, &c.out)?;
            print!("{}", pipeline::format_report(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
