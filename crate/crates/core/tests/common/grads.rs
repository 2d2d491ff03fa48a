//! Finite-difference checks over every differentiable building block.

use frfsr_core::aggregation::{DrbUnit, Esa, EsaConfig};
use frfsr_core::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use frfsr_core::kernels::ConvGeom;
use frfsr_core::losses::{l_disc_with, l_per, ConvPyramid, Discriminator};
use frfsr_core::params::{Bound, ParamBuilder, ParamStore};
use frfsr_core::{Graph, Result, Shape, Tensor, Var};

use super::{rand_tensor, rand_unit, rng};

pub const OPS: [&str; 8] = ["conv2d", "grid_sample_bilinear", "deformable_sample", "dynamic_filter_apply", "esa_attention", "drb_forward", "l_per", "l_disc"];

pub fn cfg(seed: u64, max_coords: Option<usize>) -> GradCheckConfig {
    GradCheckConfig { seed, max_coords, ..GradCheckConfig::default() }
}

/// Inputs `[x, params...]`; every stored parameter becomes a leaf.
fn with_params(x: Tensor, store: &ParamStore) -> (Vec<Tensor>, Vec<String>) {
    let mut inputs = vec![x];
    let mut names = Vec::new();
    for (name, p) in store.iter() {
        names.push(name.to_string());
        inputs.push(p.value.clone());
    }
    (inputs, names)
}

fn bind_leaves(store: &ParamStore, names: &[String], g: &mut Graph, leaves: &[Var]) -> Bound {
    let mut b = store.bind(g, false);
    for (n, v) in names.iter().zip(leaves) {
        b.insert(n.clone(), *v);
    }
    b
}

/// Give zero-initialized parameters values at the scale of a `fan_in`
/// uniform init so they take part in the check.
fn fill_zeros(store: &mut ParamStore, seed: u64, fan_in: usize) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for (i, n) in names.iter().enumerate() {
        let t = store.get(n).unwrap();
        if t.data().iter().all(|&v| v == 0.0) {
            let s = t.shape();
            store.set(n, rand_tensor(s, seed * 1000 + i as u64).scale(1.0 / (fan_in as f64).sqrt())).unwrap();
        }
    }
}

/// Attention pool small enough for a 6x6 map.
pub const SMALL_POOL: EsaConfig = EsaConfig { pool_k: 2, pool_s: 1 };

/// The block has about two thousand ReLU decisions, so more probes land on a kink.
pub const DRB_SKIP: f64 = 0.25;

/// Spreads the pre-normalization filter taps so the standardization stays
/// well conditioned at the probe step.
pub const FILTER_GAIN: f64 = 4.0;

pub fn conv2d(seed: u64) -> Result<GradCheckReport> {
    let inputs = [rand_tensor(Shape::new(2, 3, 5, 6), seed), rand_tensor(Shape::new(4, 3, 3, 3), seed + 1), rand_tensor(Shape::new(1, 4, 1, 1), seed + 2)];
    grad_check("conv2d", &inputs, &cfg(seed, None), |g, v| g.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(2, 1, 1)))
}

pub fn grid_sample(seed: u64) -> Result<GradCheckReport> {
    let x = rand_tensor(Shape::new(1, 2, 5, 6), seed);
    let grid = rand_tensor(Shape::new(1, 2, 4, 4), seed + 1).scale(1.1);
    grad_check("grid_sample_bilinear", &[x, grid], &cfg(seed, None), |g, v| g.grid_sample(v[0], v[1]))
}

pub fn deformable(seed: u64) -> Result<GradCheckReport> {
    let y = rand_tensor(Shape::new(1, 3, 5, 5), seed);
    let pre = Tensor::from_fn(Shape::new(1, 2, 5, 5), |_, c, yy, x| ((x + 2 * yy + c + seed as usize) % 3) as f64 - 1.0);
    let off = rand_tensor(Shape::new(1, 18, 5, 5), seed + 1).scale(0.7);
    let m = rand_unit(Shape::new(1, 9, 5, 5), seed + 2);
    let w = rand_tensor(Shape::new(2, 3, 3, 3), seed + 3);
    let b = rand_tensor(Shape::new(1, 2, 1, 1), seed + 4);
    grad_check("deformable_sample", &[y, off, m, w, b], &cfg(seed, Some(60)), |g, v| g.deformable(v[0], &pre, v[1], v[2], v[3], Some(v[4])))
}

pub fn dynamic_filter(seed: u64) -> Result<GradCheckReport> {
    let inputs = [
        rand_tensor(Shape::new(1, 4, 5, 5), seed),
        rand_tensor(Shape::new(1, 9, 5, 5), seed + 1),
        rand_tensor(Shape::new(1, 36, 1, 1), seed + 2),
        rand_tensor(Shape::new(1, 4, 1, 1), seed + 3),
    ];
    grad_check("dynamic_filter_apply", &inputs, &cfg(seed, None), |g, v| g.dynamic_filter(v[0], v[1], v[2], v[3]))
}

pub fn esa(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let esa = Esa::new(&mut ParamBuilder::new(&mut store, &mut r), "esa", 8, EsaConfig::default())?;
    let (inputs, names) = with_params(rand_tensor(Shape::new(1, 8, 15, 15), seed + 1), &store);
    grad_check("esa_attention", &inputs, &cfg(seed, Some(30)), |g, v| {
        let b = bind_leaves(&store, &names, g, &v[1..]);
        esa.forward(g, &b, v[0])
    })
}

pub fn drb(seed: u64) -> Result<GradCheckReport> {
    drb_step(seed, 1e-3)
}

pub fn drb_step(seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let unit = DrbUnit::new(&mut ParamBuilder::new(&mut store, &mut r), "drb", 8, true, SMALL_POOL)?;
    fill_zeros(&mut store, seed, 8 * 9);
    for n in ["drb.df1.spatial.weight", "drb.df2.spatial.weight", "drb.df1.fc2.weight", "drb.df2.fc2.weight"] {
        let w = store.get(n)?.scale(FILTER_GAIN);
        store.set(n, w)?;
    }
    let (inputs, names) = with_params(rand_tensor(Shape::new(1, 8, 6, 6), seed + 1), &store);
    grad_check("drb_forward", &inputs, &GradCheckConfig { step, max_skip_fraction: DRB_SKIP, ..cfg(seed, Some(20)) }, |g, v| {
        let b = bind_leaves(&store, &names, g, &v[1..]);
        unit.forward(g, &b, v[0])
    })
}

pub fn perceptual(seed: u64) -> Result<GradCheckReport> {
    let phi = ConvPyramid::new(&[4, 6], seed)?;
    let hr = rand_unit(Shape::new(2, 3, 6, 6), seed + 1);
    let sr = rand_unit(Shape::new(2, 3, 6, 6), seed + 2);
    grad_check("l_per", &[hr, sr], &cfg(seed, None), |g, v| l_per(g, v[0], v[1], &phi))
}

pub fn disc(seed: u64) -> Result<GradCheckReport> {
    let (d, store) = Discriminator::build(&[4, 6], seed)?;
    let sr = rand_unit(Shape::new(2, 3, 8, 8), seed + 1);
    let hr = rand_unit(Shape::new(2, 3, 8, 8), seed + 2);
    let (mut inputs, names) = with_params(sr, &store);
    inputs.push(hr);
    let u = [0.3 + 0.05 * (seed % 5) as f64, 0.8];
    grad_check("l_disc", &inputs, &cfg(seed, Some(40)), |g, v| {
        let b = bind_leaves(&store, &names, g, &v[1..v.len() - 1]);
        Ok(l_disc_with(g, &b, v[0], v[v.len() - 1], &d, 10.0, &u)?.total)
    })
}

/// All eight checks at one seed, in [`OPS`] order.
pub fn suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    Ok(vec![conv2d(seed)?, grid_sample(seed)?, deformable(seed)?, dynamic_filter(seed)?, esa(seed)?, drb(seed)?, perceptual(seed)?, disc(seed)?])
}
