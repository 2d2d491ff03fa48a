use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use frfsr_core::correspondence::{match_images, warp_reference, TextureEncoder};
use frfsr_core::harness::checkpoint::ModelCheckpoint;
use frfsr_core::harness::config::TrainConfig;
use frfsr_core::harness::data::{load_dir, save_dir, synthetic_pairs, NamedPair, ShuffleLevel};
use frfsr_core::harness::eval::{evaluate, format_scores, format_sweep, robustness_sweep, super_resolve, Output};
use frfsr_core::harness::io::{read_flow, read_png, write_flow, write_png};
use frfsr_core::harness::train::{format_log, train_two_stage};
use frfsr_core::network::{Frozen, NetConfig, SCALE};

#[derive(Parser)]
#[command(name = "frfsr", version, about = "Reference-based 4x super-resolution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Match an LR image against a 4x reference and write the flow.
    Match {
        #[arg(long)]
        lr: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        patch: usize,
        /// Seed of the texture encoder.
        #[arg(long, default_value_t = NetConfig::default().frozen_seed)]
        encoder_seed: u64,
    },
    /// Warp an image with a flow at `scale` times the flow resolution.
    Warp {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both training stages and write `rec.frf`, `all.frf` and `train.log`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Super-resolve one image.
    Sr {
        #[arg(long)]
        lr: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the last stage stored in the checkpoint.
        #[arg(long)]
        stage: Option<Output>,
    },
    /// Score a directory of `<name>_hr.png` / `<name>_ref.png` pairs.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// A single level, or `all` for the per-level table.
        #[arg(long, default_value = "none")]
        shuffle_level: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stage: Option<Output>,
    },
    /// Write procedural pairs in the `eval` directory layout, plus `<name>_lr.png`.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn default_output(ckpt: &ModelCheckpoint) -> Output {
    if ckpt.all.is_some() {
        Output::All
    } else {
        Output::Rec
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Match { lr, reference, out, patch, encoder_seed } => {
            let encoder = TextureEncoder::new(encoder_seed)?;
            let flow = match_images(&encoder, &read_png(&lr)?, &read_png(&reference)?, SCALE, patch)?;
            write_flow(&out, &flow.flow)?;
        }
        Cmd::Warp { reference, flow, scale, out } => {
            let warped = warp_reference(&read_png(&reference)?, &read_flow(&flow)?, scale as f64)?;
            write_png(&out, &warped)?;
        }
        Cmd::Train { config, out_dir } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = TrainConfig::parse(&text).with_context(|| format!("parsing {}", config.display()))?;
            let data: Vec<_> = match &cfg.data_dir {
                Some(dir) => load_dir(dir)?.into_iter().map(|p| p.pair).collect(),
                None => synthetic_pairs(cfg.pairs, cfg.hr_size, cfg.seed)?,
            };
            let out = train_two_stage(&data, &cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            out.ckpt_rec.save(&out_dir.join("rec.frf"))?;
            out.ckpt_all.save(&out_dir.join("all.frf"))?;
            std::fs::write(out_dir.join("train.log"), format_log(&out.log))?;
            if let Some(last) = out.log.last() {
                eprintln!("{last}");
            }
        }
        Cmd::Sr { lr, reference, ckpt, out, stage } => {
            let ckpt = ModelCheckpoint::load(&ckpt)?;
            let frozen = Frozen::new(&ckpt.rec.net.cfg)?;
            let stage = stage.unwrap_or_else(|| default_output(&ckpt));
            let sr = super_resolve(&ckpt, &frozen, &read_png(&lr)?, &read_png(&reference)?, stage)?;
            write_png(&out, &sr)?;
        }
        Cmd::Eval { data, ckpt, shuffle_level, seed, stage } => {
            let ckpt = ModelCheckpoint::load(&ckpt)?;
            let stage = stage.unwrap_or_else(|| default_output(&ckpt));
            let pairs = load_dir(&data)?;
            if shuffle_level == "all" {
                print!("{}", format_sweep(&robustness_sweep(&ckpt, &pairs, seed, stage)?));
            } else {
                let level: ShuffleLevel = shuffle_level.parse().map_err(anyhow::Error::msg)?;
                print!("{}", format_scores(&evaluate(&ckpt, &pairs, level, seed, stage)?));
            }
        }
        Cmd::Synth { out_dir, count, size, seed } => {
            if count == 0 {
                bail!("count must be positive");
            }
            let pairs: Vec<NamedPair> =
                synthetic_pairs(count, size, seed)?.into_iter().enumerate().map(|(i, pair)| NamedPair { name: format!("synth{i:03}"), pair }).collect();
            save_dir(&out_dir, &pairs)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
