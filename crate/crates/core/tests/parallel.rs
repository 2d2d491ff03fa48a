mod common;

use common::rand_tensor;
use frfsr_core::harness::config::TrainConfig;
use frfsr_core::harness::data::synthetic_pairs;
use frfsr_core::harness::train::{format_log, Trainer};
use frfsr_core::kernels::{conv2d, ConvGeom, ConvSpec};
use frfsr_core::network::NetConfig;
use frfsr_core::{par, Shape};

#[test]
fn sequential_mode_matches_parallel() {
    let x = rand_tensor(Shape::new(3, 8, 12, 12), 1);
    let spec = ConvSpec::new(rand_tensor(Shape::new(8, 8, 3, 3), 2), Some(vec![0.1; 8]), ConvGeom::same(3));
    let data = synthetic_pairs(2, 64, 0).unwrap();
    let run = |on: bool| {
        par::set_enabled(on);
        let y = conv2d(&x, &spec).unwrap();
        let cfg = TrainConfig { net: NetConfig::tiny(), disc_widths: vec![4, 8], perceptual_widths: vec![4, 8], ..TrainConfig::default() };
        let mut t = Trainer::new(cfg).unwrap();
        t.run_stage1(&data, 2).unwrap();
        t.run_stage2(&data, 1).unwrap();
        (y, format_log(&t.log), t.net2.params.clone(), t.rec_loss(&data).unwrap())
    };
    let seq = run(false);
    let par_ = run(true);
    assert_eq!(seq.0, par_.0);
    assert_eq!(seq.1, par_.1);
    assert_eq!(seq.2, par_.2);
    assert_eq!(seq.3.to_bits(), par_.3.to_bits());
}
