//! Texture-adaptive aggregation: decoupled dynamic filtering, enhanced
//! spatial attention and the dynamic residual block built from them.

use crate::autograd::{Graph, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::kernels::dynamic::TAPS;
use crate::kernels::ConvGeom;
use crate::layers::Conv2d;
use crate::params::{Bound, ParamBuilder, ParamStore};

/// Filter-generating branches of one decoupled dynamic filter.
#[derive(Clone, Debug)]
pub struct DynamicFilter {
    pub spatial: Conv2d,
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    /// `(gamma_sf, beta_sf, gamma_cf, beta_cf)`.
    pub affine: String,
    pub c: usize,
}

/// Normalized spatial `(n, 9, h, w)` and channel `(n, 9c, 1, 1)` filters.
#[derive(Clone, Copy, Debug)]
pub struct DecoupledFilters {
    pub spatial: Var,
    pub channel: Var,
}

impl DynamicFilter {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize) -> Result<Self> {
        if c < 4 || !c.is_multiple_of(4) {
            return Err(arg_err("dynamic_filter", format!("channel count {c} must be a positive multiple of 4")));
        }
        let mut s = b.scope(name);
        let spatial = Conv2d::same(&mut s, "spatial", c, TAPS, 3)?;
        let fc1 = Conv2d::same(&mut s, "fc1", c, c / 4, 1)?;
        let fc2 = Conv2d::same(&mut s, "fc2", c / 4, c * TAPS, 1)?;
        let affine = s.put("affine", vec![4], crate::Tensor::from_vec(crate::Shape::new(1, 4, 1, 1), vec![1.0, 0.0, 1.0, 0.0])?)?;
        Ok(DynamicFilter { spatial, fc1, fc2, affine, c })
    }

    pub fn generate_filters(&self, g: &mut Graph, p: &Bound, f: Var) -> Result<DecoupledFilters> {
        let c = g.shape(f).c;
        if c != self.c {
            return Err(shape_err("generate_filters", format!("expects {} channels, got {c}", self.c)));
        }
        let sp = self.spatial.forward(g, p, f)?;
        let spatial = g.standardize(sp, TAPS)?;
        let pooled = g.global_avg_pool(f);
        let h = self.fc1.forward(g, p, pooled)?;
        let h = g.relu(h);
        let ch = self.fc2.forward(g, p, h)?;
        let channel = g.standardize(ch, TAPS)?;
        Ok(DecoupledFilters { spatial, channel })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, f: Var) -> Result<Var> {
        let filters = self.generate_filters(g, p, f)?;
        let affine = p.var(&self.affine)?;
        g.dynamic_filter(f, filters.spatial, filters.channel, affine)
    }
}

/// Max-pool window of the attention branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EsaConfig {
    pub pool_k: usize,
    pub pool_s: usize,
}

impl Default for EsaConfig {
    fn default() -> Self {
        EsaConfig { pool_k: 7, pool_s: 3 }
    }
}

impl EsaConfig {
    /// Smallest square input the strided conv + pool chain accepts.
    pub fn min_size(&self) -> usize {
        2 * self.pool_k + 1
    }
}

#[derive(Clone, Debug)]
pub struct Esa {
    pub reduce: Conv2d,
    pub skip: Conv2d,
    pub down: Conv2d,
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
    pub expand: Conv2d,
    pub cfg: EsaConfig,
}

impl Esa {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize, cfg: EsaConfig) -> Result<Self> {
        if c < 4 || !c.is_multiple_of(4) {
            return Err(arg_err("esa", format!("channel count {c} must be a positive multiple of 4")));
        }
        let mut s = b.scope(name);
        let r = c / 4;
        Ok(Esa {
            reduce: Conv2d::same(&mut s, "reduce", c, r, 1)?,
            skip: Conv2d::same(&mut s, "skip", r, r, 1)?,
            down: Conv2d::new(&mut s, "down", r, r, 3, ConvGeom::new(2, 0, 1), true)?,
            conv_a: Conv2d::same(&mut s, "conv_a", r, r, 3)?,
            conv_b: Conv2d::same(&mut s, "conv_b", r, r, 3)?,
            expand: Conv2d::same(&mut s, "expand", r, c, 1)?,
            cfg,
        })
    }

    /// `sigmoid(expand(skip(F0) + up(conv_b(conv_a(pool(down(F0))))))) * F`, `F0 = reduce(F)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, f: Var) -> Result<Var> {
        let s = g.shape(f);
        let too_small = |len: usize| len < 3 || (len - 3) / 2 + 1 < self.cfg.pool_k;
        if too_small(s.h) || too_small(s.w) {
            return Err(shape_err(
                "esa_attention",
                format!("{}x{} input too small for pool {}/{} (needs at least {} per side)", s.h, s.w, self.cfg.pool_k, self.cfg.pool_s, self.cfg.min_size()),
            ));
        }
        let f0 = self.reduce.forward(g, p, f)?;
        let f1 = self.skip.forward(g, p, f0)?;
        let d = self.down.forward(g, p, f0)?;
        let d = g.max_pool(d, self.cfg.pool_k, self.cfg.pool_s)?;
        let d = self.conv_a.forward(g, p, d)?;
        let d = self.conv_b.forward(g, p, d)?;
        let f2 = g.resize_bilinear(d, s.h, s.w)?;
        let sum = g.add(f1, f2)?;
        let logits = self.expand.forward(g, p, sum)?;
        let mask = g.sigmoid(logits);
        g.mul(mask, f)
    }
}

/// One dynamic residual unit, or a plain residual block when the dynamic
/// filters and attention are disabled.
#[derive(Clone, Debug)]
pub struct DrbUnit {
    pub dynamic: Option<(DynamicFilter, DynamicFilter)>,
    pub conv_a: Conv2d,
    /// Zero-initialized so the unit starts as the identity.
    pub conv_b: Conv2d,
    pub esa: Option<Esa>,
}

impl DrbUnit {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize, dynamic: bool, esa: EsaConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let filters = if dynamic { Some((DynamicFilter::new(&mut s, "df1", c)?, DynamicFilter::new(&mut s, "df2", c)?)) } else { None };
        let conv_a = Conv2d::same(&mut s, "conv_a", c, c, 3)?;
        let conv_b = Conv2d::same(&mut s, "conv_b", c, c, 3)?;
        for n in conv_b.param_names() {
            s.zero(n)?;
        }
        let esa = if dynamic { Some(Esa::new(&mut s, "esa", c, esa)?) } else { None };
        Ok(DrbUnit { dynamic: filters, conv_a, conv_b, esa })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some((df1, df2)) = &self.dynamic {
            let a = df1.forward(g, p, h)?;
            let a = g.relu(a);
            let a = df2.forward(g, p, a)?;
            h = g.relu(a);
        }
        let r = self.conv_a.forward(g, p, h)?;
        let r = g.relu(r);
        let mut r = self.conv_b.forward(g, p, r)?;
        if let Some(esa) = &self.esa {
            r = esa.forward(g, p, r)?;
        }
        g.add(x, r)
    }
}

#[derive(Clone, Debug)]
pub struct Drb {
    pub units: Vec<DrbUnit>,
}

impl Drb {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize, n_units: usize, dynamic: bool, esa: EsaConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let units = (0..n_units).map(|i| DrbUnit::new(&mut s, &format!("unit{i}"), c, dynamic, esa)).collect::<Result<_>>()?;
        Ok(Drb { units })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.units.iter().try_fold(x, |h, u| u.forward(g, p, h))
    }

    pub fn zero_residuals(&self, store: &mut ParamStore) -> Result<()> {
        self.units.iter().try_for_each(|u| u.conv_b.zero(store))
    }
}

/// Channel layout of one aggregation module's inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaamInputs {
    pub c: usize,
    /// SIFE channels; only the smallest scale may carry them.
    pub c_sife: Option<usize>,
    /// Reuse channels; only present in the second stage.
    pub c_reuse: Option<usize>,
}

impl TaamInputs {
    pub fn fused_channels(&self) -> usize {
        2 * self.c + self.c_sife.unwrap_or(0) + self.c_reuse.unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct Taam {
    pub inputs: TaamInputs,
    pub fusion: Conv2d,
    pub drb: Drb,
}

impl Taam {
    pub fn new(b: &mut ParamBuilder, name: &str, inputs: TaamInputs, n_units: usize, dynamic: bool, esa: EsaConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let fusion = Conv2d::same(&mut s, "fusion", inputs.fused_channels(), inputs.c, 1)?;
        let drb = Drb::new(&mut s, "drb", inputs.c, n_units, dynamic, esa)?;
        Ok(Taam { inputs, fusion, drb })
    }

    /// `DRB(fusion([F_tex; F_LR; F_sife?; F_reuse?])) + F_LR`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, f_tex: Var, f_lr: Var, f_sife: Option<Var>, f_reuse: Option<Var>) -> Result<Var> {
        let mut parts = vec![f_tex, f_lr];
        match (f_sife, self.inputs.c_sife) {
            (Some(v), Some(_)) => parts.push(v),
            (None, None) => {}
            (Some(_), None) => return Err(arg_err("taam_aggregate", "SIFE features are only accepted at the smallest scale")),
            (None, Some(_)) => return Err(arg_err("taam_aggregate", "missing SIFE features at the smallest scale")),
        }
        match (f_reuse, self.inputs.c_reuse) {
            (Some(v), Some(_)) => parts.push(v),
            (None, None) => {}
            (Some(_), None) => return Err(arg_err("taam_aggregate", "reuse features supplied to a first-stage module")),
            (None, Some(_)) => return Err(arg_err("taam_aggregate", "missing reuse features")),
        }
        let cat = g.concat(&parts)?;
        let fused = self.fusion.forward(g, p, cat)?;
        let agg = self.drb.forward(g, p, fused)?;
        g.add(agg, f_lr)
    }

    pub fn zero_residual_paths(&self, store: &mut ParamStore) -> Result<()> {
        self.fusion.zero(store)?;
        self.drb.zero_residuals(store)
    }
}
