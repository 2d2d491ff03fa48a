//! Inference and PSNR/SSIM evaluation, including the shuffled-reference
//! robustness sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::error::{arg_err, Result};
use crate::harness::checkpoint::ModelCheckpoint;
use crate::harness::data::{shuffle_patches, NamedPair, ShuffleLevel};
use crate::harness::metrics::psnr_ssim_y;
use crate::network::{prepare, reuse_features, Frozen};
use crate::par;
use crate::tensor::Tensor;

/// Which network of a checkpoint produces the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Output {
    Rec,
    All,
}

impl std::str::FromStr for Output {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rec" => Ok(Output::Rec),
            "all" => Ok(Output::All),
            _ => Err(format!("unknown stage `{s}` (expected rec or all)")),
        }
    }
}

/// Super-resolve an LR batch with its references; output is clamped to `[0, 1]`.
pub fn super_resolve(ckpt: &ModelCheckpoint, frozen: &Frozen, lr: &Tensor, reference: &Tensor, output: Output) -> Result<Tensor> {
    let prep = prepare(frozen, lr, reference)?;
    let mut g = Graph::new();
    let b1 = ckpt.rec.params.bind(&mut g, false);
    let sr = match (output, &ckpt.all) {
        (Output::Rec, _) => ckpt.rec.net.forward(&mut g, &b1, &prep, None)?.i_sr,
        (Output::All, None) => return Err(arg_err("super_resolve", "checkpoint holds only the reconstruction stage")),
        (Output::All, Some(all)) => {
            let reuse = if all.net.expects_reuse() {
                let out1 = ckpt.rec.net.forward(&mut g, &b1, &prep, None)?;
                Some(reuse_features(&mut g, &out1, all.net.cfg.reuse_mode)?)
            } else {
                None
            };
            let b2 = all.params.bind(&mut g, false);
            all.net.forward(&mut g, &b2, &prep, reuse.as_deref())?.i_sr
        }
    };
    Ok(g.value(sr).map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Score every pair with its reference shuffled at `level`. Image `i` uses
/// stream `i` of the seeded generator, so results do not depend on scheduling.
pub fn evaluate(ckpt: &ModelCheckpoint, pairs: &[NamedPair], level: ShuffleLevel, seed: u64, output: Output) -> Result<Vec<ImageScore>> {
    let frozen = Frozen::new(&ckpt.rec.net.cfg)?;
    let indexed: Vec<(usize, &NamedPair)> = pairs.iter().enumerate().collect();
    par::map_slice(&indexed, |&(i, p)| -> Result<ImageScore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let reference = shuffle_patches(&p.pair.reference, level, &mut rng)?;
        let sr = super_resolve(ckpt, &frozen, &p.pair.lr, &reference, output)?;
        let (psnr, ssim) = psnr_ssim_y(&sr, &p.pair.hr)?;
        Ok(ImageScore { name: p.name.clone(), psnr, ssim })
    })
    .into_iter()
    .collect()
}

pub fn mean_scores(scores: &[ImageScore]) -> (f64, f64) {
    let n = scores.len().max(1) as f64;
    (scores.iter().map(|s| s.psnr).sum::<f64>() / n, scores.iter().map(|s| s.ssim).sum::<f64>() / n)
}

/// `name\tpsnr\tssim` per image, then a `mean` line.
pub fn format_scores(scores: &[ImageScore]) -> String {
    let mut out = String::new();
    for s in scores {
        out.push_str(&format!("{}\t{:.4}\t{:.6}\n", s.name, s.psnr, s.ssim));
    }
    let (p, s) = mean_scores(scores);
    out.push_str(&format!("mean\t{p:.4}\t{s:.6}\n"));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelRow {
    pub level: ShuffleLevel,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean scores of one checkpoint at every shuffle level.
pub fn robustness_sweep(ckpt: &ModelCheckpoint, pairs: &[NamedPair], seed: u64, output: Output) -> Result<Vec<LevelRow>> {
    ShuffleLevel::ALL
        .iter()
        .map(|&level| {
            let (psnr, ssim) = mean_scores(&evaluate(ckpt, pairs, level, seed, output)?);
            Ok(LevelRow { level, psnr, ssim })
        })
        .collect()
}

/// `level\tpsnr\tssim` header and one row per level.
pub fn format_sweep(rows: &[LevelRow]) -> String {
    let mut out = String::from("level\tpsnr\tssim\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.4}\t{:.6}\n", r.level, r.psnr, r.ssim));
    }
    out
}
