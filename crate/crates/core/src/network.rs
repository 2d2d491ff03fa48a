//! The generator: shallow LR trunk, single-image embedding, three scales of
//! alignment + aggregation joined by sub-pixel upsampling, and an image head.
//! The second-stage generator additionally consumes frozen features of the
//! first stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{EsaConfig, Taam, TaamInputs};
use crate::alignment::{pre_offset, Fam};
use crate::autograd::{Graph, Var};
use crate::correspondence::{match_images, warp_reference, TextureEncoder};
use crate::error::{arg_err, shape_err, Result};
use crate::hash::fnv1a;
use crate::kernels::{resize_bilinear, ConvGeom};
use crate::layers::{leaky_relu, Conv2d};
use crate::par;
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Upscaling factor between LR input and SR output.
pub const SCALE: usize = 4;
/// Number of aggregation scales (1x, 2x, 4x the LR resolution).
pub const SCALES: usize = 3;
const SLOPE: f64 = 0.1;
const DENSE_SCALE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReuseMode {
    /// One aggregated feature per scale.
    PerScale,
    /// The final feature map, bilinearly resized to every scale.
    FinalDownsampled,
}

impl std::str::FromStr for ReuseMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per_scale" => Ok(ReuseMode::PerScale),
            "final_downsampled" => Ok(ReuseMode::FinalDownsampled),
            _ => Err(format!("unknown reuse mode `{s}` (expected per_scale or final_downsampled)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// First stage, reconstruction only.
    Rec,
    /// Second stage; `reuse` selects whether first-stage features are consumed.
    All { reuse: bool },
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub c: usize,
    /// Reference pyramid widths at Ref, Ref/2 and Ref/4 resolution.
    pub ref_c: [usize; 3],
    pub c_sife: usize,
    pub sife_blocks: usize,
    pub dense_units: usize,
    pub growth: usize,
    pub drb_units: usize,
    pub esa: EsaConfig,
    pub sife: bool,
    pub drb: bool,
    pub reuse_mode: ReuseMode,
    pub patch: usize,
    /// Seed of the frozen texture encoder and reference pyramid.
    pub frozen_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            c: 64,
            ref_c: [32, 64, 128],
            c_sife: 64,
            sife_blocks: 2,
            dense_units: 3,
            growth: 32,
            drb_units: 2,
            esa: EsaConfig::default(),
            sife: true,
            drb: true,
            reuse_mode: ReuseMode::PerScale,
            patch: 3,
            frozen_seed: 7,
        }
    }
}

impl NetConfig {
    /// Narrow variant for fast smoke runs.
    pub fn tiny() -> Self {
        NetConfig { c: 8, ref_c: [8, 8, 16], c_sife: 8, sife_blocks: 1, dense_units: 1, growth: 8, drb_units: 1, ..NetConfig::default() }
    }

    pub fn fingerprint(&self, stage: Stage) -> u64 {
        fnv1a(format!("{self:?}/{stage:?}").as_bytes())
    }
}

/// Frozen multi-scale reference feature extractor.
#[derive(Clone, Debug)]
pub struct RefPyramid {
    store: ParamStore,
    convs: Vec<Conv2d>,
}

impl RefPyramid {
    pub fn new(widths: [usize; 3], seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            convs.push(Conv2d::new(&mut b, &format!("level{i}"), c_in, c, 3, ConvGeom::new(stride, 1, 1), true)?);
            c_in = c;
        }
        Ok(RefPyramid { store, convs })
    }

    /// Features at Ref, Ref/2 and Ref/4 resolution.
    pub fn extract(&self, reference: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(3);
        let mut x = reference.clone();
        for conv in &self.convs {
            x = leaky_relu(&conv.apply(&self.store, &x)?, SLOPE);
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Frozen modules shared by both stages.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub encoder: TextureEncoder,
    pub pyramid: RefPyramid,
    pub patch: usize,
}

impl Frozen {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        Ok(Frozen { encoder: TextureEncoder::new(cfg.frozen_seed)?, pyramid: RefPyramid::new(cfg.ref_c, cfg.frozen_seed.wrapping_add(1))?, patch: cfg.patch })
    }
}

/// Everything the generators need from the frozen correspondence path, per
/// scale `s` (0 = LR resolution, 1 = 2x, 2 = 4x).
#[derive(Clone, Debug)]
pub struct Prepared {
    pub lr: Tensor,
    pub flow: Tensor,
    pub refs: Vec<Tensor>,
    pub warped: Vec<Tensor>,
    pub pre: Vec<Tensor>,
}

/// Match every LR/Ref pair and build the per-scale reference inputs.
pub fn prepare(frozen: &Frozen, lr: &Tensor, reference: &Tensor) -> Result<Prepared> {
    let (ls, rs) = (lr.shape(), reference.shape());
    if ls.c != 3 || rs.c != 3 || ls.n != rs.n {
        return Err(shape_err("prepare", format!("LR {ls} and Ref {rs} must be 3-channel batches of equal size")));
    }
    if rs.h < SCALE * ls.h || rs.w < SCALE * ls.w {
        return Err(shape_err("prepare", format!("Ref {rs} smaller than {SCALE}x LR {ls}")));
    }
    if rs.h != SCALE * ls.h || rs.w != SCALE * ls.w {
        return Err(shape_err("prepare", format!("Ref {rs} must be exactly {SCALE}x LR {ls}")));
    }
    let flows = par::map_range(ls.n, |n| -> Result<Tensor> {
        let l = lr.batch_slice(n, 1)?;
        let r = reference.batch_slice(n, 1)?;
        Ok(match_images(&frozen.encoder, &l, &r, SCALE, frozen.patch)?.flow)
    });
    let flow = Tensor::stack(&flows.into_iter().collect::<Result<Vec<_>>>()?)?;
    let mut levels = frozen.pyramid.extract(reference)?;
    levels.reverse();
    let mut warped = Vec::with_capacity(SCALES);
    let mut pre = Vec::with_capacity(SCALES);
    for (s, level) in levels.iter().enumerate() {
        let k = 1 << s;
        warped.push(warp_reference(level, &flow, k as f64)?);
        pre.push(pre_offset(&flow, k));
    }
    Ok(Prepared { lr: lr.clone(), flow, refs: levels, warped, pre })
}

#[derive(Clone, Debug)]
struct DenseUnit {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl DenseUnit {
    fn new(b: &mut ParamBuilder, name: &str, c: usize, growth: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(DenseUnit {
            c1: Conv2d::same(&mut s, "c1", c, growth, 3)?,
            c2: Conv2d::same(&mut s, "c2", c + growth, growth, 3)?,
            c3: Conv2d::same(&mut s, "c3", c + 2 * growth, c, 3)?,
        })
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let a1 = self.c1.forward(g, p, x)?;
        let a1 = g.leaky_relu(a1, 0.2);
        let cat = g.concat(&[x, a1])?;
        let a2 = self.c2.forward(g, p, cat)?;
        let a2 = g.leaky_relu(a2, 0.2);
        let cat = g.concat(&[x, a1, a2])?;
        let o = self.c3.forward(g, p, cat)?;
        let o = g.scale(o, DENSE_SCALE);
        g.add(x, o)
    }
}

/// Residual-in-residual trunk at LR resolution.
#[derive(Clone, Debug)]
pub struct Sife {
    first: Conv2d,
    blocks: Vec<Vec<DenseUnit>>,
    trunk: Conv2d,
    pub res_scale: String,
}

impl Sife {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize, blocks: usize, units: usize, growth: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let first = Conv2d::same(&mut s, "first", 3, c, 3)?;
        let blocks = (0..blocks)
            .map(|i| (0..units).map(|j| DenseUnit::new(&mut s, &format!("rrdb{i}.unit{j}"), c, growth)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let trunk = Conv2d::same(&mut s, "trunk", c, c, 3)?;
        let res_scale = s.constant("res_scale", vec![1], 0.1)?;
        Ok(Sife { first, blocks, trunk, res_scale })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let f0 = self.first.forward(g, p, x)?;
        let mut h = f0;
        for block in &self.blocks {
            let inner = block.iter().try_fold(h, |t, u| u.forward(g, p, t))?;
            let inner = g.scale(inner, DENSE_SCALE);
            h = g.add(h, inner)?;
        }
        let t = self.trunk.forward(g, p, h)?;
        let t = g.scale_by(t, p.var(&self.res_scale)?)?;
        g.add(f0, t)
    }
}

/// Result of one generator pass.
#[derive(Clone, Debug)]
pub struct StageOutputs {
    pub f_sr: Var,
    pub i_sr: Var,
    /// Aggregated features per scale.
    pub aggregated: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: NetConfig,
    pub stage: Stage,
    shallow: [Conv2d; 2],
    pub sife: Option<Sife>,
    pub fams: Vec<Fam>,
    pub taams: Vec<Taam>,
    ups: [Conv2d; 2],
    head: Conv2d,
}

impl Generator {
    pub fn new(cfg: &NetConfig, stage: Stage, seed: u64) -> Result<(Generator, ParamStore)> {
        if !cfg.c.is_multiple_of(4) || cfg.c == 0 {
            return Err(arg_err("generator", format!("trunk width {} must be a positive multiple of 4", cfg.c)));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let c = cfg.c;
        let shallow = [Conv2d::same(&mut b, "shallow0", 3, c, 3)?, Conv2d::same(&mut b, "shallow1", c, c, 3)?];
        let sife = if cfg.sife { Some(Sife::new(&mut b, "sife", cfg.c_sife, cfg.sife_blocks, cfg.dense_units, cfg.growth)?) } else { None };
        let reuse = matches!(stage, Stage::All { reuse: true });
        let mut fams = Vec::with_capacity(SCALES);
        let mut taams = Vec::with_capacity(SCALES);
        for s in 0..SCALES {
            let c_ref = cfg.ref_c[SCALES - 1 - s];
            fams.push(Fam::new(&mut b, &format!("fam{s}"), c, c_ref, c)?);
            let inputs = TaamInputs { c, c_sife: (s == 0 && cfg.sife).then_some(cfg.c_sife), c_reuse: reuse.then_some(c) };
            taams.push(Taam::new(&mut b, &format!("taam{s}"), inputs, cfg.drb_units, cfg.drb, cfg.esa)?);
        }
        let ups = [Conv2d::same(&mut b, "up0", c, 4 * c, 3)?, Conv2d::same(&mut b, "up1", c, 4 * c, 3)?];
        let head = Conv2d::same(&mut b, "head", c, 3, 3)?;
        let gen = Generator { cfg: cfg.clone(), stage, shallow, sife, fams, taams, ups, head };
        Ok((gen, store))
    }

    pub fn fingerprint(&self) -> u64 {
        self.cfg.fingerprint(self.stage)
    }

    pub fn expects_reuse(&self) -> bool {
        matches!(self.stage, Stage::All { reuse: true })
    }

    pub fn shallow_features(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.shallow[0].forward(g, p, x)?;
        let h = g.leaky_relu(h, SLOPE);
        self.shallow[1].forward(g, p, h)
    }

    fn upsample(&self, g: &mut Graph, p: &Bound, s: usize, x: Var) -> Result<Var> {
        let h = self.ups[s].forward(g, p, x)?;
        let h = g.pixel_shuffle(h, 2)?;
        Ok(g.leaky_relu(h, SLOPE))
    }

    /// Image produced from LR features when every aggregation is the identity.
    pub fn upsample_path(&self, g: &mut Graph, p: &Bound, f_lr: Var) -> Result<Var> {
        let h = self.upsample(g, p, 0, f_lr)?;
        let h = self.upsample(g, p, 1, h)?;
        self.head.forward(g, p, h)
    }

    /// Full pass. `reuse` must be present exactly for a reuse-consuming
    /// second-stage generator; the caller is responsible for detaching it.
    pub fn forward(&self, g: &mut Graph, p: &Bound, prep: &Prepared, reuse: Option<&[Var]>) -> Result<StageOutputs> {
        match (self.expects_reuse(), reuse) {
            (true, None) => return Err(arg_err("stage2_forward", "missing reuse features")),
            (false, Some(_)) => return Err(arg_err("stage1_forward", "this generator does not consume reuse features")),
            (true, Some(r)) if r.len() != SCALES => return Err(shape_err("stage2_forward", format!("{} reuse tensors for {SCALES} scales", r.len()))),
            _ => {}
        }
        let x = g.constant(prep.lr.clone());
        let mut f = self.shallow_features(g, p, x)?;
        let sife = self.sife.as_ref().map(|s| s.forward(g, p, x)).transpose()?;
        let mut aggregated = Vec::with_capacity(SCALES);
        for s in 0..SCALES {
            let f_ref = g.constant(prep.refs[s].clone());
            let warped = g.constant(prep.warped[s].clone());
            let tex = self.fams[s].forward(g, p, f, f_ref, warped, &prep.pre[s])?;
            let reuse_v = reuse.map(|r| r[s]);
            let agg = self.taams[s].forward(g, p, tex, f, if s == 0 { sife } else { None }, reuse_v)?;
            aggregated.push(agg);
            f = if s + 1 < SCALES { self.upsample(g, p, s, agg)? } else { agg };
        }
        let i_sr = self.head.forward(g, p, f)?;
        Ok(StageOutputs { f_sr: f, i_sr, aggregated })
    }

    /// Zero fusion convs, residual tails, offset heads and the SIFE scale.
    pub fn zero_residual_paths(&self, store: &mut ParamStore) -> Result<()> {
        for t in &self.taams {
            t.zero_residual_paths(store)?;
        }
        for f in &self.fams {
            f.zero_offset_head(store)?;
        }
        if let Some(s) = &self.sife {
            store.zero(&s.res_scale)?;
        }
        Ok(())
    }
}

/// First-stage features handed to the second stage, detached from the tape.
pub fn reuse_features(g: &mut Graph, out: &StageOutputs, mode: ReuseMode) -> Result<Vec<Var>> {
    match mode {
        ReuseMode::PerScale => Ok(out.aggregated.iter().map(|v| g.detach(*v)).collect()),
        ReuseMode::FinalDownsampled => {
            let f = g.value(out.f_sr).clone();
            let sizes: Vec<Shape> = out.aggregated.iter().map(|v| g.shape(*v)).collect();
            sizes
                .into_iter()
                .map(|s| {
                    let t = if (s.h, s.w) == (f.shape().h, f.shape().w) { f.clone() } else { resize_bilinear(&f, s.h, s.w)? };
                    Ok(g.constant(t))
                })
                .collect()
        }
    }
}
