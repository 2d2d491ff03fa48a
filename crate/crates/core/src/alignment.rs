//! Feature alignment: offsets and modulation predicted from the LR, reference
//! and warped reference features drive a modulated deformable sampling of the
//! reference around its matched position.

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::kernels::sample::DEFORM_TAPS;
use crate::layers::Conv2d;
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::{Shape, Tensor};

const HIDDEN_SLOPE: f64 = 0.1;

/// Learned residual offsets `(n, 18, h, w)` laid out `(dx_k, dy_k)` and
/// sigmoid modulation `(n, 9, h, w)`.
#[derive(Clone, Copy, Debug)]
pub struct OffsetPrediction {
    pub offsets: Var,
    pub modulation: Var,
}

#[derive(Clone, Debug)]
pub struct Fam {
    pub hidden: Conv2d,
    /// Zero-initialized head producing `3 * 9` channels.
    pub head: Conv2d,
    pub deform_weight: String,
    pub deform_bias: String,
    pub c_ref: usize,
    pub c_out: usize,
}

impl Fam {
    pub fn new(b: &mut ParamBuilder, name: &str, c_lr: usize, c_ref: usize, c_out: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let c_in = c_lr + 2 * c_ref;
        let hidden = Conv2d::same(&mut s, "offset_hidden", c_in, c_out, 3)?;
        let head = Conv2d::same(&mut s, "offset_head", c_out, 3 * DEFORM_TAPS, 3)?;
        for n in head.param_names() {
            s.zero(n)?;
        }
        let fan_in = c_ref * DEFORM_TAPS;
        let deform_weight = s.uniform("deform_weight", vec![c_out, c_ref, 3, 3], fan_in)?;
        let deform_bias = s.uniform("deform_bias", vec![c_out], fan_in)?;
        Ok(Fam { hidden, head, deform_weight, deform_bias, c_ref, c_out })
    }

    pub fn zero_offset_head(&self, store: &mut ParamStore) -> Result<()> {
        self.head.zero(store)
    }

    pub fn predict_offsets(&self, g: &mut Graph, p: &Bound, f_lr: Var, f_ref: Var, warped: Var) -> Result<OffsetPrediction> {
        let (a, b, c) = (g.shape(f_lr), g.shape(f_ref), g.shape(warped));
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) || (a.n, a.h, a.w) != (c.n, c.h, c.w) {
            return Err(shape_err("predict_offsets", format!("F_LR {a}, F_ref {b}, warped {c} must share batch and spatial size")));
        }
        let cat = g.concat(&[f_lr, f_ref, warped])?;
        let h = self.hidden.forward(g, p, cat)?;
        let h = g.leaky_relu(h, HIDDEN_SLOPE);
        let out = self.head.forward(g, p, h)?;
        let offsets = g.slice_channels(out, 0, 2 * DEFORM_TAPS)?;
        let m = g.slice_channels(out, 2 * DEFORM_TAPS, DEFORM_TAPS)?;
        let modulation = g.sigmoid(m);
        Ok(OffsetPrediction { offsets, modulation })
    }

    /// Aligned texture features; `pre` is the integer pre-offset `(n, 2, h, w)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, f_lr: Var, f_ref: Var, warped: Var, pre: &Tensor) -> Result<Var> {
        let pred = self.predict_offsets(g, p, f_lr, f_ref, warped)?;
        let w = p.var(&self.deform_weight)?;
        let b = p.var(&self.deform_bias)?;
        g.deformable(f_ref, pre, pred.offsets, pred.modulation, w, Some(b))
    }
}

/// Pre-offset at `scale` times the flow resolution: each displacement is
/// repeated over its `scale x scale` block and multiplied by `scale`.
pub fn pre_offset(flow: &Tensor, scale: usize) -> Tensor {
    let s = flow.shape();
    Tensor::from_fn(Shape::new(s.n, 2, s.h * scale, s.w * scale), |n, c, y, x| flow.at(n, c, y / scale, x / scale) * scale as f64)
}
