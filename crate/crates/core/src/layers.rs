//! Parameterized building blocks shared by the network modules.

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::kernels::conv::{self, ConvGeom};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::Tensor;

/// Convolution whose kernel (and optional bias) live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: String,
    pub bias: Option<String>,
    pub geom: ConvGeom,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
}

impl Conv2d {
    pub fn new(b: &mut ParamBuilder, name: &str, in_c: usize, out_c: usize, k: usize, geom: ConvGeom, bias: bool) -> Result<Self> {
        let mut s = b.scope(name);
        let fan_in = in_c * k * k;
        let weight = s.uniform("weight", vec![out_c, in_c, k, k], fan_in)?;
        let bias = if bias { Some(s.uniform("bias", vec![out_c], fan_in)?) } else { None };
        Ok(Conv2d { weight, bias, geom, in_c, out_c, k })
    }

    /// Biased `k x k` convolution with "same" padding.
    pub fn same(b: &mut ParamBuilder, name: &str, in_c: usize, out_c: usize, k: usize) -> Result<Self> {
        Conv2d::new(b, name, in_c, out_c, k, ConvGeom::same(k), true)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let w = p.var(&self.weight)?;
        let b = self.bias.as_deref().map(|n| p.var(n)).transpose()?;
        g.conv2d(x, w, b, self.geom)
    }

    /// Graph-free forward, for frozen modules.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let w = store.get(&self.weight)?;
        let b = self.bias.as_deref().map(|n| store.get(n)).transpose()?;
        conv::conv2d_forward(x, w, b.map(|t| t.data()), self.geom)
    }

    pub fn param_names(&self) -> Vec<&str> {
        let mut v = vec![self.weight.as_str()];
        v.extend(self.bias.as_deref());
        v
    }

    pub fn zero(&self, store: &mut ParamStore) -> Result<()> {
        for n in self.param_names() {
            store.zero(n)?;
        }
        Ok(())
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}
