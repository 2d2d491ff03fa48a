//! Named parameter storage, graph binding and the Adam optimizer.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// One named tensor with its logical dimensions (rank 1 to 4).
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub dims: Vec<usize>,
    pub value: Tensor,
}

pub fn shape_of_dims(dims: &[usize]) -> Result<Shape> {
    Ok(match *dims {
        [a] => Shape::new(1, a, 1, 1),
        [a, b] => Shape::new(a, b, 1, 1),
        [a, b, c] => Shape::new(1, a, b, c),
        [a, b, c, d] => Shape::new(a, b, c, d),
        _ => return Err(shape_err("param", format!("rank {} not in 1..=4", dims.len()))),
    })
}

/// Insertion-ordered parameter store. Values are kept exactly representable
/// in `f32` so that checkpoints round-trip bit-exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, mut value: Tensor) -> Result<()> {
        let name = name.into();
        let shape = shape_of_dims(&dims)?;
        value.expect_shape(shape, "param")?;
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        value.round_to_f32();
        self.entries.insert(name, Param { dims, value });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).map(|p| &p.value).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replace a value in place; the shape must not change.
    pub fn set(&mut self, name: &str, mut value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        value.expect_shape(slot.shape(), "param")?;
        value.round_to_f32();
        *slot = value;
        Ok(())
    }

    pub fn zero(&mut self, name: &str) -> Result<()> {
        let slot = self.get_mut(name)?;
        *slot = Tensor::zeros(slot.shape());
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Copy every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamStore) -> Result<()> {
        for (name, p) in other.iter() {
            self.insert(format!("{prefix}{name}"), p.dims.clone(), p.value.clone())?;
        }
        Ok(())
    }

    /// Entries whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, p) in self.iter() {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.insert(rest, p.dims.clone(), p.value.clone())?;
            }
        }
        Ok(out)
    }

    /// Overwrite values from `other`; both stores must hold the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(shape_err("load_params", format!("{} tensors supplied for {} parameters", other.len(), self.len())));
        }
        for (name, p) in other.iter() {
            if self.entries.get(name).map(|q| &q.dims) != Some(&p.dims) {
                return match self.entries.get(name) {
                    None => Err(Error::UnknownParam(name.to_string())),
                    Some(q) => Err(shape_err("load_params", format!("`{name}`: dims {:?} vs {:?}", p.dims, q.dims))),
                };
            }
            self.set(name, p.value.clone())?;
        }
        Ok(())
    }

    /// Register every parameter in `g` as a trainable leaf (or a constant).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, p)| {
                let v = if trainable { g.leaf(p.value.clone()) } else { g.constant(p.value.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter name to graph node mapping produced by [`ParamStore::bind`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::UnknownParam(name.to_string()))
    }
}

/// Creates parameters under a dotted name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { store, rng, prefix: String::new() }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = self.name(name);
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    pub fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, leaf: &str, dims: Vec<usize>, fan_in: usize) -> Result<String> {
        let shape = shape_of_dims(&dims)?;
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::rand_uniform(shape, -bound, bound, self.rng);
        self.put(leaf, dims, t)
    }

    pub fn constant(&mut self, leaf: &str, dims: Vec<usize>, value: f64) -> Result<String> {
        let shape = shape_of_dims(&dims)?;
        self.put(leaf, dims, Tensor::full(shape, value))
    }

    pub fn put(&mut self, leaf: &str, dims: Vec<usize>, value: Tensor) -> Result<String> {
        let name = self.name(leaf);
        self.store.insert(name.clone(), dims, value)?;
        Ok(name)
    }

    /// Zero an already created parameter (full name).
    pub fn zero(&mut self, name: &str) -> Result<()> {
        self.store.zero(name)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn next_seed(&mut self) -> u64 {
        self.rng.random()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.99, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Updated values are rounded to `f32`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter in `store`; parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, bound: &Bound, grads: &Gradients) -> Result<()> {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in store.entries.iter_mut() {
            let n = p.value.numel();
            let g = grads.get(bound.var(name)?);
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p.value.data_mut()[i] -= step;
            }
            p.value.round_to_f32();
        }
        Ok(())
    }
}
