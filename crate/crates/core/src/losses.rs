//! Reconstruction, perceptual, adversarial and critic losses.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::kernels::ConvGeom;
use crate::layers::Conv2d;
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub per: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rec: 1.0, per: 1e-4, adv: 1e-6 }
    }
}

impl LossWeights {
    pub const REC_ONLY: LossWeights = LossWeights { rec: 1.0, per: 0.0, adv: 0.0 };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub rec: f64,
    pub per: f64,
    pub adv: f64,
}

impl std::fmt::Display for LossParts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rec={} per={} adv={}", self.rec, self.per, self.adv)
    }
}

/// `w.rec * rec + w.per * per + w.adv * adv`; rejects non-finite parts.
pub fn l_total(parts: LossParts, w: LossWeights) -> Result<f64> {
    for (name, v) in [("rec", parts.rec), ("per", parts.per), ("adv", parts.adv)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "l_total", detail: Some(format!("{name} loss is {v}")) });
        }
    }
    Ok(w.rec * parts.rec + w.per * parts.per + w.adv * parts.adv)
}

/// Weighted sum on the graph; zero-weight terms are skipped.
pub fn l_total_var(g: &mut Graph, rec: Var, per: Option<Var>, adv: Option<Var>, w: LossWeights) -> Result<Var> {
    let mut total = g.scale(rec, w.rec);
    for (v, k) in [(per, w.per), (adv, w.adv)] {
        if let (Some(v), true) = (v, k != 0.0) {
            let t = g.scale(v, k);
            total = g.add(total, t)?;
        }
    }
    Ok(total)
}

/// Mean absolute error.
pub fn l_rec(g: &mut Graph, hr: Var, sr: Var) -> Result<Var> {
    g.mean_abs_diff(sr, hr)
}

/// Frozen feature extractor for the perceptual loss.
pub trait PerceptualExtractor {
    fn features(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>>;
}

/// Seeded random-weight conv pyramid with a tap after every level.
#[derive(Clone, Debug)]
pub struct ConvPyramid {
    store: ParamStore,
    convs: Vec<Conv2d>,
}

impl ConvPyramid {
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            convs.push(Conv2d::new(&mut b, &format!("phi{i}"), c_in, c, 3, ConvGeom::new(stride, 1, 1), true)?);
            c_in = c;
        }
        Ok(ConvPyramid { store, convs })
    }

    pub fn standard(seed: u64) -> Result<Self> {
        ConvPyramid::new(&[16, 32, 64], seed)
    }
}

impl PerceptualExtractor for ConvPyramid {
    fn features(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let p = self.store.bind(g, false);
        let mut taps = Vec::with_capacity(self.convs.len());
        let mut h = x;
        for conv in &self.convs {
            let z = conv.forward(g, &p, h)?;
            h = g.leaky_relu(z, 0.2);
            taps.push(h);
        }
        Ok(taps)
    }
}

/// `(1/V) * sum_i ||phi_i(hr) - phi_i(sr)||_F`, `V` the total tap volume.
pub fn l_per(g: &mut Graph, hr: Var, sr: Var, phi: &dyn PerceptualExtractor) -> Result<Var> {
    if g.shape(hr) != g.shape(sr) {
        return Err(shape_err("l_per", format!("{} vs {}", g.shape(hr), g.shape(sr))));
    }
    let a = phi.features(g, hr)?;
    let b = phi.features(g, sr)?;
    let volume: usize = a.iter().map(|v| g.shape(*v).numel()).sum();
    let mut total: Option<Var> = None;
    for (x, y) in a.into_iter().zip(b) {
        let d = g.sub(x, y)?;
        let sq = g.square(d);
        let s = g.sum(sq);
        let norm = g.sqrt(s)?;
        total = Some(match total {
            Some(t) => g.add(t, norm)?,
            None => norm,
        });
    }
    let total = total.ok_or_else(|| shape_err("l_per", "extractor produced no taps"))?;
    Ok(g.scale(total, 1.0 / volume as f64))
}

/// A critic whose input gradient can itself be differentiated.
pub trait Critic {
    /// Scores `(n, 1, 1, 1)`.
    fn score(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var>;
    /// Gradient of the summed scores with respect to `x`, built on the graph.
    fn input_gradient(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var>;
}

/// Strided conv stack, global average pooling and a linear score.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    linear_w: String,
    linear_b: String,
    slope: f64,
}

impl Discriminator {
    pub const WIDTHS: [usize; 4] = [32, 64, 128, 256];

    pub fn new(b: &mut ParamBuilder, name: &str, widths: &[usize]) -> Result<Self> {
        let mut s = b.scope(name);
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in widths.iter().enumerate() {
            convs.push(Conv2d::new(&mut s, &format!("conv{i}"), c_in, c, 3, ConvGeom::new(2, 1, 1), true)?);
            c_in = c;
        }
        let linear_w = s.uniform("linear_w", vec![1, c_in, 1, 1], c_in)?;
        let linear_b = s.uniform("linear_b", vec![1], c_in)?;
        Ok(Discriminator { convs, linear_w, linear_b, slope: 0.2 })
    }

    pub fn build(widths: &[usize], seed: u64) -> Result<(Discriminator, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Discriminator::new(&mut ParamBuilder::new(&mut store, &mut rng), "", widths)?;
        Ok((d, store))
    }

    /// Pre-activations of every conv, and the final pooled features.
    fn trunk(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Vec<Var>, Var)> {
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut h = x;
        for conv in &self.convs {
            let z = conv.forward(g, p, h)?;
            pre.push(z);
            h = g.leaky_relu(z, self.slope);
        }
        Ok((pre, g.global_avg_pool(h)))
    }
}

impl Critic for Discriminator {
    fn score(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (_, pooled) = self.trunk(g, p, x)?;
        g.conv2d(pooled, p.var(&self.linear_w)?, Some(p.var(&self.linear_b)?), ConvGeom::valid())
    }

    fn input_gradient(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let xs = g.shape(x);
        let (pre, _) = self.trunk(g, p, x)?;
        let w = p.var(&self.linear_w)?;
        let dpool = g.broadcast_batch(w, xs.n)?;
        let last = g.shape(*pre.last().ok_or_else(|| shape_err("discriminator", "no conv layers"))?);
        let dh = g.broadcast_spatial(dpool, last.h, last.w)?;
        let mut dh = g.scale(dh, 1.0 / (last.h * last.w) as f64);
        for i in (0..self.convs.len()).rev() {
            let z = g.value(pre[i]);
            let slope = self.slope;
            let mask = z.map(|v| if v > 0.0 { 1.0 } else { slope });
            let dz = g.mul_const(dh, &mask)?;
            let in_shape = if i == 0 { xs } else { g.shape(pre[i - 1]) };
            dh = g.conv2d_input_grad(dz, p.var(&self.convs[i].weight)?, self.convs[i].geom, in_shape)?;
        }
        Ok(dh)
    }
}

/// `D(x) = <w, x>` per sample; the bound name `w` must hold a `(1, c, h, w)` tensor.
#[derive(Clone, Debug)]
pub struct LinearCritic {
    pub weight: String,
}

impl Critic for LinearCritic {
    fn score(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.shape(x).n;
        let w = g.broadcast_batch(p.var(&self.weight)?, n)?;
        let prod = g.mul(x, w)?;
        Ok(g.sum_per_sample(prod))
    }

    fn input_gradient(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.shape(x).n;
        g.broadcast_batch(p.var(&self.weight)?, n)
    }
}

/// `-mean(D(sr))`.
pub fn l_adv(g: &mut Graph, p: &Bound, sr: Var, d: &dyn Critic) -> Result<Var> {
    let s = d.score(g, p, sr)?;
    let m = g.mean(s);
    Ok(g.scale(m, -1.0))
}

/// Critic objective and its gradient-penalty term (both on the graph).
#[derive(Clone, Copy, Debug)]
pub struct DiscLoss {
    pub total: Var,
    pub penalty: Var,
}

/// `mean(D(sr)) - mean(D(hr)) + lambda * mean((|grad D(x_hat)| - 1)^2)` with
/// `x_hat = u*hr + (1-u)*sr`, one `u ~ U(0,1)` per sample.
pub fn l_disc(g: &mut Graph, p: &Bound, sr: Var, hr: Var, d: &dyn Critic, lambda_gp: f64, rng: &mut ChaCha8Rng) -> Result<DiscLoss> {
    let s = g.shape(sr);
    if s != g.shape(hr) {
        return Err(shape_err("l_disc", format!("{s} vs {}", g.shape(hr))));
    }
    let u: Vec<f64> = (0..s.n).map(|_| rng.random::<f64>()).collect();
    l_disc_with(g, p, sr, hr, d, lambda_gp, &u)
}

/// [`l_disc`] with explicit interpolation weights.
pub fn l_disc_with(g: &mut Graph, p: &Bound, sr: Var, hr: Var, d: &dyn Critic, lambda_gp: f64, u: &[f64]) -> Result<DiscLoss> {
    let s = g.shape(sr);
    if u.len() != s.n {
        return Err(shape_err("l_disc", format!("{} interpolation weights for batch {}", u.len(), s.n)));
    }
    let ds = d.score(g, p, sr)?;
    let dh = d.score(g, p, hr)?;
    let ms = g.mean(ds);
    let mh = g.mean(dh);
    let wasserstein = g.sub(ms, mh)?;

    let uu = Tensor::from_fn(s, |n, _, _, _| u[n]);
    let vv = uu.map(|a| 1.0 - a);
    let a = g.mul_const(hr, &uu)?;
    let b = g.mul_const(sr, &vv)?;
    let x_hat = g.add(a, b)?;
    let grad = d.input_gradient(g, p, x_hat)?;
    let sq = g.sum_sq_per_sample(grad);
    let norm = g.sqrt(sq)?;
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.square(dev);
    let penalty = g.mean(dev2);
    let weighted = g.scale(penalty, lambda_gp);
    let total = g.add(wasserstein, weighted)?;
    Ok(DiscLoss { total, penalty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn total_with_default_weights() {
        let v = l_total(LossParts { rec: 0.5, per: 2.0, adv: 3.0 }, LossWeights::default()).unwrap();
        assert!((v - 0.500203).abs() < 1e-12);
        let err = l_total(LossParts { rec: 0.5, per: f64::NAN, adv: 3.0 }, LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("per"));
    }

    #[test]
    fn rec_of_constant_difference() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(Shape::new(2, 3, 4, 5), 0.5));
        let b = g.constant(Tensor::full(Shape::new(2, 3, 4, 5), 0.75));
        let l = l_rec(&mut g, a, b).unwrap();
        assert!((g.value(l).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn discriminator_scores_per_sample() {
        let (d, store) = Discriminator::build(&[4, 8], 0).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let x = g.constant(Tensor::full(Shape::new(3, 3, 8, 8), 0.3));
        let s = d.score(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(s), Shape::new(3, 1, 1, 1));
    }
}
