mod common;

use common::{outer_product_filter, rand_tensor, rng};
use frfsr_core::harness::checkpoint::{decode, encode};
use frfsr_core::harness::data::{shuffle_patches, ShuffleLevel};
use frfsr_core::kernels::{dynamic_filter_apply, fold_average, pixel_shuffle, pixel_unshuffle, unfold, FilterAffine};
use frfsr_core::params::{shape_of_dims, ParamStore};
use frfsr_core::Shape;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pixel_shuffle_round_trips(c in 1usize..4, h in 1usize..5, w in 1usize..5, r in 1usize..4, seed in any::<u64>()) {
        let x = rand_tensor(Shape::new(1, c * r * r, h, w), seed);
        let up = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(up.shape(), Shape::new(1, c, h * r, w * r));
        prop_assert_eq!(pixel_unshuffle(&up, r).unwrap(), x);
    }

    #[test]
    fn shuffling_preserves_values(level in 0usize..4, seed in any::<u64>(), img in any::<u64>()) {
        let x = rand_tensor(Shape::new(1, 3, 16, 16), img);
        let y = shuffle_patches(&x, ShuffleLevel::ALL[level], &mut rng(seed)).unwrap();
        let mut a = x.data().to_vec();
        let mut b = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dynamic_filter_matches_materialized_kernels(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let f = rand_tensor(Shape::new(1, c, h, w), seed);
        let sp = rand_tensor(Shape::new(1, 9, h, w), seed ^ 1);
        let ch = rand_tensor(Shape::new(1, 9 * c, 1, 1), seed ^ 2);
        let a = FilterAffine { gamma_sf: 0.7, beta_sf: 0.2, gamma_cf: 1.3, beta_cf: -0.1 };
        let got = dynamic_filter_apply(&f, &sp, &ch, a).unwrap();
        prop_assert!(got.max_abs_diff(&outer_product_filter(&f, &sp, &ch, a)) <= 1e-12);
    }

    #[test]
    fn unfold_then_fold_is_identity(h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        let x = rand_tensor(Shape::new(1, 2, h, w), seed);
        let p = unfold(&x, 3, 1, 1).unwrap();
        prop_assert!(fold_average(&p, x.shape(), 3, 1, 1).unwrap().max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn checkpoints_round_trip(dims in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 1..4), fp in any::<u64>()) {
        let mut s = ParamStore::new();
        for (i, d) in dims.iter().enumerate() {
            s.insert(format!("p{i}"), d.clone(), rand_tensor(shape_of_dims(d).unwrap(), i as u64)).unwrap();
        }
        let bytes = encode(&s, fp);
        let (back, fp2) = decode(&bytes).unwrap();
        prop_assert_eq!(fp2, fp);
        prop_assert_eq!(back, s);
    }
}
