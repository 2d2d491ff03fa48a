mod common;

use common::{rand_tensor, rand_unit, rng};
use frfsr_core::losses::{
    l_adv, l_disc, l_disc_with, l_per, l_rec, l_total, l_total_var, ConvPyramid, Critic, Discriminator, LinearCritic, LossParts, LossWeights,
};
use frfsr_core::params::{Bound, ParamStore};
use frfsr_core::{Graph, Result, Shape, Tensor, Var};

struct ConstCritic(f64);

impl Critic for ConstCritic {
    fn score(&self, g: &mut Graph, _: &Bound, x: Var) -> Result<Var> {
        let n = g.shape(x).n;
        Ok(g.constant(Tensor::full(Shape::new(n, 1, 1, 1), self.0)))
    }

    fn input_gradient(&self, g: &mut Graph, _: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x);
        Ok(g.constant(Tensor::zeros(s)))
    }
}

fn linear_store(w: Tensor) -> ParamStore {
    let mut s = ParamStore::new();
    let dims = w.shape().dims().to_vec();
    s.insert("w", dims, w).unwrap();
    s
}

#[test]
fn reconstruction_loss_examples() {
    let mut g = Graph::new();
    let a = g.constant(rand_unit(Shape::new(2, 3, 5, 4), 1));
    let z = l_rec(&mut g, a, a).unwrap();
    assert_eq!(g.value(z).data(), &[0.0]);
    let x = g.constant(Tensor::full(Shape::new(1, 3, 7, 2), 0.1));
    let y = g.constant(Tensor::full(Shape::new(1, 3, 7, 2), 0.35));
    let l = l_rec(&mut g, x, y).unwrap();
    assert!((g.value(l).data()[0] - 0.25).abs() < 1e-15);
    let bad = g.constant(Tensor::zeros(Shape::new(1, 3, 7, 3)));
    assert!(l_rec(&mut g, x, bad).is_err());
}

#[test]
fn perceptual_loss_of_identical_images_is_zero() {
    let phi = ConvPyramid::standard(0).unwrap();
    let mut g = Graph::new();
    let a = g.constant(rand_unit(Shape::new(1, 3, 16, 16), 2));
    let b = g.constant(rand_unit(Shape::new(1, 3, 16, 16), 3));
    let z = l_per(&mut g, a, a, &phi).unwrap();
    assert_eq!(g.value(z).data(), &[0.0]);
    let p = l_per(&mut g, a, b, &phi).unwrap();
    assert!(g.value(p).data()[0] > 0.0);
}

#[test]
fn adversarial_loss_examples() {
    let mut g = Graph::new();
    let sr = g.leaf(rand_unit(Shape::new(3, 3, 4, 4), 4));
    let l = l_adv(&mut g, &Bound::default(), sr, &ConstCritic(0.7)).unwrap();
    assert!((g.value(l).data()[0] + 0.7).abs() < 1e-15);

    let w = rand_tensor(Shape::new(1, 3, 4, 4), 5);
    let store = linear_store(w);
    let w = store.get("w").unwrap().clone();
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let sr = g.leaf(rand_unit(Shape::new(1, 3, 4, 4), 6));
    let l = l_adv(&mut g, &p, sr, &LinearCritic { weight: "w".into() }).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(sr).unwrap().max_abs_diff(&w.scale(-1.0)) < 1e-15);
}

#[test]
fn penalty_vanishes_for_unit_norm_linear_critic() {
    // sixteen entries of +-1/4: unit norm with no rounding anywhere
    let mut w = Tensor::zeros(Shape::new(1, 3, 6, 6));
    for (i, k) in (0..16).map(|i| (i, (i * 7 + 3) % 108)) {
        w.data_mut()[k] = if i % 3 == 0 { -0.25 } else { 0.25 };
    }
    let store = linear_store(w);
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let sr = g.constant(rand_unit(Shape::new(4, 3, 6, 6), 8));
    let hr = g.constant(rand_unit(Shape::new(4, 3, 6, 6), 9));
    let d = l_disc(&mut g, &p, sr, hr, &LinearCritic { weight: "w".into() }, 10.0, &mut rng(0)).unwrap();
    assert_eq!(g.value(d.penalty).data()[0], 0.0);
}

#[test]
fn critic_terms_cancel_on_identical_inputs() {
    let (d, store) = Discriminator::build(&[4, 8], 3).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(rand_unit(Shape::new(2, 3, 8, 8), 10));
    let out = l_disc(&mut g, &p, x, x, &d, 10.0, &mut rng(1)).unwrap();
    let (total, pen) = (g.value(out.total).data()[0], g.value(out.penalty).data()[0]);
    assert!((total - 10.0 * pen).abs() < 1e-12);
}

#[test]
fn penalty_symmetric_under_swap() {
    let (d, store) = Discriminator::build(&[4, 8], 4).unwrap();
    let a = rand_unit(Shape::new(2, 3, 8, 8), 11);
    let b = rand_unit(Shape::new(2, 3, 8, 8), 12);
    let u = [0.3, 0.85];
    let pen = |x: &Tensor, y: &Tensor, u: &[f64]| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let (x, y) = (g.constant(x.clone()), g.constant(y.clone()));
        let out = l_disc_with(&mut g, &p, x, y, &d, 10.0, u).unwrap();
        g.value(out.penalty).data()[0]
    };
    let swapped: Vec<f64> = u.iter().map(|v| 1.0 - v).collect();
    assert!((pen(&a, &b, &u) - pen(&b, &a, &swapped)).abs() < 1e-12);
}

#[test]
fn critic_loss_is_reproducible_for_a_seed() {
    let (d, store) = Discriminator::build(&[4, 8], 5).unwrap();
    let run = |seed| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let sr = g.constant(rand_unit(Shape::new(2, 3, 8, 8), 13));
        let hr = g.constant(rand_unit(Shape::new(2, 3, 8, 8), 14));
        let out = l_disc(&mut g, &p, sr, hr, &d, 10.0, &mut rng(seed)).unwrap();
        g.value(out.total).data()[0]
    };
    assert_eq!(run(3), run(3));
}

#[test]
fn total_loss_arithmetic() {
    let parts = LossParts { rec: 0.37, per: 12.5, adv: -3.25 };
    assert_eq!(l_total(parts, LossWeights::REC_ONLY).unwrap(), 0.37);
    let w = LossWeights::default();
    assert_eq!((w.rec, w.per, w.adv), (1.0, 1e-4, 1e-6));
    let manual = 1.0 * 0.37 + 1e-4 * 12.5 + 1e-6 * -3.25;
    assert!((l_total(parts, w).unwrap() - manual).abs() <= 1e-12);
    assert!((l_total(LossParts { rec: 0.5, per: 2.0, adv: 3.0 }, w).unwrap() - 0.500203).abs() <= 1e-12);
    let e = l_total(LossParts { rec: 0.5, per: 1.0, adv: f64::INFINITY }, w).unwrap_err();
    assert!(e.to_string().contains("adv"));

    let mut g = Graph::new();
    let (r, p, a) = (g.constant(Tensor::scalar(0.37)), g.constant(Tensor::scalar(12.5)), g.constant(Tensor::scalar(-3.25)));
    let t = l_total_var(&mut g, r, Some(p), Some(a), w).unwrap();
    assert!((g.value(t).data()[0] - manual).abs() <= 1e-12);
}
