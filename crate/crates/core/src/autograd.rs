//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of every node that depends on a trainable leaf.
//!
//! Piecewise-linear operations (rectifiers, max pooling, absolute value) fold
//! their active pattern into [`Graph::decision_signature`], which finite
//! difference checks use to detect that a perturbation crossed a kink.

use crate::error::{arg_err, shape_err, Result};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::dynamic::{self, FilterAffine};
use crate::kernels::{pool, sample, shuffle};
use crate::tensor::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    ScaleBy,
    AddScalar,
    MulConst(Tensor),
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Concat(Vec<usize>),
    SliceChannels { start: usize },
    Conv { geom: ConvGeom },
    ConvInputGrad { geom: ConvGeom },
    GridSample,
    Resize,
    MaxPool { arg: Vec<usize> },
    PixelShuffle(usize),
    GlobalAvgPool,
    BroadcastBatch,
    BroadcastSpatial,
    Standardize { t: usize, inv: Vec<f64> },
    Dynamic,
    Deform { pre: Tensor },
    Sum,
    Mean,
    MeanAbsDiff,
    SumSqPerSample,
    SumPerSample,
    Sqrt,
    Square,
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    decisions: u64,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x100_0000_01b3).rotate_left(7)
}

fn pattern_hash(bits: impl Iterator<Item = bool>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut word = 0u64;
    for (i, b) in bits.enumerate() {
        word = (word << 1) | b as u64;
        if i % 64 == 63 {
            h = mix(h, word);
            word = 0;
        }
    }
    mix(h, word)
}

fn cells_hash(cells: impl Iterator<Item = i64>) -> u64 {
    cells.fold(0x84222325cbf29ce4, |h, c| mix(h, c as u64))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every rectifier mask, pooling argmax and sign pattern recorded so far.
    pub fn decision_signature(&self) -> u64 {
        self.decisions
    }

    fn record_decisions(&mut self, h: u64) {
        self.decisions = mix(self.decisions, h);
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, op: Op) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        let parents = if requires_grad { parents } else { Vec::new() };
        self.nodes.push(Node { value, parents, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, vec![a, b], Op::Add))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, vec![a, b], Op::Sub))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, vec![a, b], Op::Mul))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, vec![a], Op::Scale(k))
    }

    /// `a * s` for a single-element `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.value(s);
        if k.numel() != 1 {
            return Err(shape_err("scale_by", format!("scale must be a single element, got {}", k.shape())));
        }
        let v = self.value(a).scale(k.data()[0]);
        Ok(self.push(v, vec![a, s], Op::ScaleBy))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, vec![a], Op::AddScalar)
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let v = self.value(a).zip_map(c, "mul_const", |x, y| x * y)?;
        Ok(self.push(v, vec![a], Op::MulConst(c.clone())))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let h = pattern_hash(x.data().iter().map(|&v| v > 0.0));
        let v = x.map(|v| if v > 0.0 { v } else { 0.0 });
        self.record_decisions(h);
        self.push(v, vec![a], Op::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let x = self.value(a);
        let h = pattern_hash(x.data().iter().map(|&v| v > 0.0));
        let v = x.map(|v| if v > 0.0 { v } else { slope * v });
        self.record_decisions(h);
        self.push(v, vec![a], Op::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, vec![a], Op::Sigmoid)
    }

    // ----- structural -----

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first);
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (base.n, base.h, base.w) {
                return Err(shape_err("concat", format!("{s} vs {base}")));
            }
            chans.push(s.c);
        }
        let total: usize = chans.iter().sum();
        let os = Shape::new(base.n, total, base.h, base.w);
        let mut data = Vec::with_capacity(os.numel());
        for n in 0..base.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).sample(n));
            }
        }
        let v = Tensor::from_vec(os, data)?;
        Ok(self.push(v, parts.to_vec(), Op::Concat(chans)))
    }

    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.c || len == 0 {
            return Err(shape_err("slice_channels", format!("{start}..{} out of {} channels", start + len, s.c)));
        }
        let os = Shape::new(s.n, len, s.h, s.w);
        let p = s.plane();
        let x = self.value(a);
        let mut data = Vec::with_capacity(os.numel());
        for n in 0..s.n {
            data.extend_from_slice(&x.sample(n)[start * p..(start + len) * p]);
        }
        let v = Tensor::from_vec(os, data)?;
        Ok(self.push(v, vec![a], Op::SliceChannels { start }))
    }

    /// Repeat a single-sample tensor `n` times along the batch axis.
    pub fn broadcast_batch(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.n != 1 {
            return Err(shape_err("broadcast_batch", format!("expects batch 1, got {s}")));
        }
        let items = vec![self.value(a).clone(); n];
        let v = Tensor::stack(&items)?;
        Ok(self.push(v, vec![a], Op::BroadcastBatch))
    }

    /// Repeat a `(n, c, 1, 1)` tensor over an `h x w` plane.
    pub fn broadcast_spatial(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.h != 1 || s.w != 1 {
            return Err(shape_err("broadcast_spatial", format!("expects 1x1 planes, got {s}")));
        }
        let x = self.value(a);
        let v = Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, _, _| x.at(n, c, 0, 0));
        Ok(self.push(v, vec![a], Op::BroadcastSpatial))
    }

    // ----- kernels -----

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let bias = match b {
            Some(b) => {
                let bs = self.shape(b);
                let ws = self.shape(w);
                if bs.numel() != ws.n {
                    return Err(shape_err("conv2d", format!("bias {bs} for {} output channels", ws.n)));
                }
                Some(self.value(b).data())
            }
            None => None,
        };
        let v = conv::conv2d_forward(self.value(x), self.value(w), bias, geom)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(v, parents, Op::Conv { geom }))
    }

    /// Gradient of a convolution with respect to its input, as a differentiable
    /// function of the output gradient `g` and the kernel `w`.
    pub fn conv2d_input_grad(&mut self, g: Var, w: Var, geom: ConvGeom, input: Shape) -> Result<Var> {
        let ws = self.shape(w);
        let expect = conv::conv_output_shape(input, ws, geom)?;
        if self.shape(g) != expect {
            return Err(shape_err("conv2d_input_grad", format!("output gradient {} vs expected {expect}", self.shape(g))));
        }
        let v = conv::conv2d_input_grad(self.value(g), self.value(w), geom, input);
        Ok(self.push(v, vec![g, w], Op::ConvInputGrad { geom }))
    }

    pub fn grid_sample(&mut self, x: Var, grid: Var) -> Result<Var> {
        let v = sample::grid_sample_bilinear(self.value(x), self.value(grid))?;
        let is = self.shape(x);
        let gs = self.value(grid);
        let lo = gs.shape().plane();
        let cells = (0..gs.shape().n).flat_map(|n| {
            (0..lo)
                .flat_map(move |p| [sample::denormalize(gs.plane(n, 0)[p], is.w).floor() as i64, sample::denormalize(gs.plane(n, 1)[p], is.h).floor() as i64])
        });
        let h = cells_hash(cells);
        self.record_decisions(h);
        Ok(self.push(v, vec![x, grid], Op::GridSample))
    }

    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let v = sample::resize_bilinear(self.value(x), h, w)?;
        Ok(self.push(v, vec![x], Op::Resize))
    }

    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (v, arg) = pool::max_pool(self.value(x), k, stride)?;
        let h = pattern_hash(arg.iter().flat_map(|&i| (0..64).map(move |b| (i >> b) & 1 == 1)));
        self.record_decisions(h);
        Ok(self.push(v, vec![x], Op::MaxPool { arg }))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let v = shuffle::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(v, vec![x], Op::PixelShuffle(r)))
    }

    /// `(n, c, h, w) -> (n, c, 1, 1)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.shape();
        let v = Tensor::from_fn(Shape::new(s.n, s.c, 1, 1), |n, c, _, _| t.plane(n, c).iter().sum::<f64>() / s.plane() as f64);
        self.push(v, vec![x], Op::GlobalAvgPool)
    }

    /// Filter normalization over consecutive channel groups of size `t`.
    pub fn standardize(&mut self, x: Var, t: usize) -> Result<Var> {
        let (v, inv) = dynamic::standardize_groups(self.value(x), t, dynamic::FN_EPS)?;
        Ok(self.push(v, vec![x], Op::Standardize { t, inv }))
    }

    /// Decoupled dynamic filtering; `affine` holds `(gamma_sf, beta_sf, gamma_cf, beta_cf)`.
    pub fn dynamic_filter(&mut self, f: Var, spatial: Var, channel: Var, affine: Var) -> Result<Var> {
        let aff = self.affine_of(affine)?;
        let v = dynamic::dynamic_filter_apply(self.value(f), self.value(spatial), self.value(channel), aff)?;
        Ok(self.push(v, vec![f, spatial, channel, affine], Op::Dynamic))
    }

    fn affine_of(&self, affine: Var) -> Result<FilterAffine> {
        let a = self.value(affine);
        if a.numel() != 4 {
            return Err(shape_err("dynamic_filter", format!("affine must hold 4 values, got {}", a.shape())));
        }
        let d = a.data();
        Ok(FilterAffine { gamma_sf: d[0], beta_sf: d[1], gamma_cf: d[2], beta_cf: d[3] })
    }

    /// Modulated deformable sampling around a constant integer pre-offset.
    pub fn deformable(&mut self, y: Var, pre: &Tensor, off: Var, modv: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let bias = b.map(|b| self.value(b).data());
        let v = sample::deformable_sample(self.value(y), pre, self.value(off), self.value(modv), self.value(w), bias)?;
        let h = cells_hash(sample::deform_cells(pre, self.value(off)).into_iter());
        self.record_decisions(h);
        let mut parents = vec![y, off, modv, w];
        parents.extend(b);
        Ok(self.push(v, parents, Op::Deform { pre: pre.clone() }))
    }

    // ----- reductions -----

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, vec![a], Op::Sum)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, vec![a], Op::Mean)
    }

    /// `mean(|a - b|)`; the subgradient at equality is zero.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).zip_map(self.value(b), "mean_abs_diff", |x, y| x - y)?;
        let h = pattern_hash(d.data().iter().flat_map(|&v| [v > 0.0, v < 0.0]));
        self.record_decisions(h);
        let v = Tensor::scalar(d.data().iter().map(|v| v.abs()).sum::<f64>() / d.numel() as f64);
        Ok(self.push(v, vec![a, b], Op::MeanAbsDiff))
    }

    /// Per-sample sum, `(n, 1, 1, 1)`.
    pub fn sum_per_sample(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.shape().n;
        let v = Tensor::from_fn(Shape::new(n, 1, 1, 1), |i, _, _, _| x.sample(i).iter().sum());
        self.push(v, vec![a], Op::SumPerSample)
    }

    /// Per-sample sum of squares, `(n, 1, 1, 1)`.
    pub fn sum_sq_per_sample(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.shape().n;
        let v = Tensor::from_fn(Shape::new(n, 1, 1, 1), |i, _, _, _| x.sample(i).iter().map(|v| v * v).sum());
        self.push(v, vec![a], Op::SumSqPerSample)
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.data().iter().any(|&v| v < 0.0) {
            return Err(arg_err("sqrt", "negative input"));
        }
        let v = x.map(f64::sqrt);
        Ok(self.push(v, vec![a], Op::Sqrt))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, vec![a], Op::Square)
    }

    // ----- backward -----

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err("backward", format!("loss must be a single element, got {}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.parents.is_empty() {
                let pg = self.node_backward(node, &g)?;
                for (p, pg) in node.parents.iter().zip(pg) {
                    let (Some(pg), true) = (pg, self.nodes[p.0].requires_grad) else { continue };
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&pg)?,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let inp = |k: usize| &self.nodes[node.parents[k].0].value;
        let needs = |k: usize| self.nodes[node.parents[k].0].requires_grad;
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.scale(-1.0))],
            Op::Mul => vec![
                needs(0).then(|| g.zip_map(inp(1), "mul", |a, b| a * b)).transpose()?,
                needs(1).then(|| g.zip_map(inp(0), "mul", |a, b| a * b)).transpose()?,
            ],
            Op::Scale(k) => vec![Some(g.scale(*k))],
            Op::ScaleBy => {
                let k = inp(1);
                let ds: f64 = g.data().iter().zip(inp(0).data()).map(|(a, b)| a * b).sum();
                vec![Some(g.scale(k.data()[0])), Some(Tensor::from_vec(k.shape(), vec![ds])?)]
            }
            Op::AddScalar => vec![Some(g.clone())],
            Op::MulConst(c) => vec![Some(g.zip_map(c, "mul_const", |a, b| a * b)?)],
            Op::Relu => vec![Some(g.zip_map(inp(0), "relu", |a, x| if x > 0.0 { a } else { 0.0 })?)],
            Op::LeakyRelu(s) => vec![Some(g.zip_map(inp(0), "leaky_relu", |a, x| if x > 0.0 { a } else { s * a })?)],
            Op::Sigmoid => vec![Some(g.zip_map(out, "sigmoid", |a, y| a * y * (1.0 - y))?)],
            Op::Concat(chans) => {
                let s = g.shape();
                let p = s.plane();
                let mut res = Vec::with_capacity(chans.len());
                let mut start = 0;
                for &c in chans {
                    let mut d = Vec::with_capacity(s.n * c * p);
                    for n in 0..s.n {
                        d.extend_from_slice(&g.sample(n)[start * p..(start + c) * p]);
                    }
                    res.push(Some(Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d)?));
                    start += c;
                }
                res
            }
            Op::SliceChannels { start } => {
                let is = inp(0).shape();
                let gs = g.shape();
                let p = is.plane();
                let mut d = Tensor::zeros(is);
                for n in 0..is.n {
                    let off = n * is.sample() + start * p;
                    d.data_mut()[off..off + gs.c * p].copy_from_slice(g.sample(n));
                }
                vec![Some(d)]
            }
            Op::BroadcastBatch => {
                let s = inp(0).shape();
                let mut d = Tensor::zeros(s);
                for n in 0..g.shape().n {
                    for (a, b) in d.data_mut().iter_mut().zip(g.sample(n)) {
                        *a += b;
                    }
                }
                vec![Some(d)]
            }
            Op::BroadcastSpatial => {
                let s = inp(0).shape();
                vec![Some(Tensor::from_fn(s, |n, c, _, _| g.plane(n, c).iter().sum()))]
            }
            Op::Conv { geom } => {
                let x = inp(0);
                let w = inp(1);
                let mut res =
                    vec![needs(0).then(|| conv::conv2d_input_grad(g, w, *geom, x.shape())), needs(1).then(|| conv::conv2d_weight_grad(x, g, w.shape(), *geom))];
                if node.parents.len() == 3 {
                    let bs = inp(2).shape();
                    res.push(needs(2).then(|| Tensor::from_vec(bs, conv::conv2d_bias_grad(g))).transpose()?);
                }
                res
            }
            Op::ConvInputGrad { geom } => {
                let gin = inp(0);
                let w = inp(1);
                vec![
                    needs(0).then(|| conv::conv2d_forward(g, w, None, *geom)).transpose()?,
                    needs(1).then(|| conv::conv2d_weight_grad(g, gin, w.shape(), *geom)),
                ]
            }
            Op::GridSample => {
                let (gi, gg) = sample::grid_sample_backward(inp(0), inp(1), g);
                vec![Some(gi), Some(gg)]
            }
            Op::Resize => vec![Some(sample::resize_bilinear_backward(inp(0).shape(), g))],
            Op::MaxPool { arg } => vec![Some(pool::max_pool_backward(inp(0).shape(), arg, g))],
            Op::PixelShuffle(r) => vec![Some(shuffle::pixel_unshuffle(g, *r)?)],
            Op::GlobalAvgPool => {
                let s = inp(0).shape();
                let k = 1.0 / s.plane() as f64;
                vec![Some(Tensor::from_fn(s, |n, c, _, _| g.at(n, c, 0, 0) * k))]
            }
            Op::Standardize { t, inv } => vec![Some(dynamic::standardize_backward(out, inv, *t, g))],
            Op::Dynamic => {
                let aff = self.affine_of(node.parents[3])?;
                let d = dynamic::dynamic_filter_backward(inp(0), inp(1), inp(2), aff, g);
                let ashape = inp(3).shape();
                vec![Some(d.f), Some(d.spatial), Some(d.channel), Some(Tensor::from_vec(ashape, d.affine.to_vec())?)]
            }
            Op::Deform { pre } => {
                let d = sample::deformable_backward(inp(0), pre, inp(1), inp(2), inp(3), g);
                let mut res = vec![Some(d.y), Some(d.off), Some(d.modv), Some(d.weight)];
                if node.parents.len() == 5 {
                    res.push(Some(Tensor::from_vec(inp(4).shape(), d.bias)?));
                }
                res
            }
            Op::Sum => vec![Some(Tensor::full(inp(0).shape(), g.data()[0]))],
            Op::Mean => {
                let s = inp(0).shape();
                vec![Some(Tensor::full(s, g.data()[0] / s.numel() as f64))]
            }
            Op::MeanAbsDiff => {
                let a = inp(0);
                let b = inp(1);
                let k = g.data()[0] / a.numel() as f64;
                let ga = a.zip_map(b, "mean_abs_diff", |x, y| {
                    if x > y {
                        k
                    } else if x < y {
                        -k
                    } else {
                        0.0
                    }
                })?;
                let gb = ga.scale(-1.0);
                vec![Some(ga), Some(gb)]
            }
            Op::SumSqPerSample => {
                let x = inp(0);
                let s = x.shape();
                vec![Some(Tensor::from_fn(s, |n, c, y, xx| 2.0 * x.at(n, c, y, xx) * g.at(n, 0, 0, 0)))]
            }
            Op::SumPerSample => {
                let s = inp(0).shape();
                vec![Some(Tensor::from_fn(s, |n, _, _, _| g.at(n, 0, 0, 0)))]
            }
            Op::Sqrt => vec![Some(g.zip_map(out, "sqrt", |a, y| if y > 0.0 { a / (2.0 * y) } else { 0.0 })?)],
            Op::Square => vec![Some(g.zip_map(inp(0), "square", |a, x| 2.0 * a * x)?)],
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
