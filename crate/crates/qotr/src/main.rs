use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qotr::checkpoint::Checkpoint;
use qotr::config::TrainConfig;
use qotr::data::{load_png, save_png};
use qotr::infer::{eval_dir, outpaint};
use qotr::synth::synth_corpus;
use qotr::train::train;

#[derive(Parser)]
#[command(name = "qotr", about = "Query-based image outpainting: train, run, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's data directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write per-epoch and final checkpoints here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extrapolate an image on all four sides.
    Outpaint {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Number of recursive outpainting steps.
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Noise seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean PSNR of one-step outpainting over a directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate the synthetic training corpus.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the finite-difference gradient suite; nonzero exit on failure.
    Gradcheck,
}

fn run() -> qotr_core::Result<bool> {
    match Cli::parse().command {
        Command::Train { config, data, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(dir) = data {
                cfg.data_dir = dir;
            }
            cfg.validate()?;
            eprintln!("step, L_adv_D, L_adv_G, L_rec, L_perc, L_total");
            let outcome = train(&cfg, out.as_deref(), &mut |t| println!("{t}"))?;
            eprintln!(
                "trained {} steps ({} discriminator updates)",
                outcome.checkpoint.step, outcome.counters.discriminator_updates
            );
            if let Some(dir) = &out {
                eprintln!("checkpoints written to {}", dir.display());
            }
            Ok(true)
        }
        Command::Outpaint {
            ckpt,
            input,
            output,
            steps,
            seed,
        } => {
            let (ckpt, warnings) = Checkpoint::load(&ckpt)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let img = load_png(&input)?;
            let (out, trail) = outpaint(&img, &ckpt, steps, seed)?;
            save_png(&output, &out)?;
            for (i, g) in trail.iter().enumerate() {
                eprintln!(
                    "step {}: {}x{} -> {}x{}",
                    i + 1,
                    g.in_side.0,
                    g.in_side.1,
                    g.out_side.0,
                    g.out_side.1
                );
            }
            Ok(true)
        }
        Command::Eval { ckpt, data } => {
            let (ckpt, warnings) = Checkpoint::load(&ckpt)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let (mean, n) = eval_dir(&ckpt, &data, 0)?;
            println!("mean PSNR over {n} images: {mean:.3} dB");
            Ok(true)
        }
        Command::SynthData {
            out,
            count,
            size,
            seed,
        } => {
            synth_corpus(&out, count, size, seed)?;
            println!("wrote {count} images of {size}x{size} to {}", out.display());
            Ok(true)
        }
        Command::Gradcheck => {
            let results = qotr_core::gradcheck::full_suite()?;
            let mut ok = true;
            for r in &results {
                println!("{r}");
                ok &= r.passed();
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
