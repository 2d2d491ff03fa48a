//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{brute_force_match, direct_ssim, outer_product_filter, rand_tensor, rand_unit, rng};
use frfsr_core::correspondence::{match_features, warp_reference, TextureEncoder};
use frfsr_core::degrade::bicubic_upsample;
use frfsr_core::harness::checkpoint::{decode, encode, ModelCheckpoint};
use frfsr_core::harness::config::TrainConfig;
use frfsr_core::harness::data::{shuffle_patches, synthetic_pairs, NamedPair, SamplePair, ShuffleLevel};
use frfsr_core::harness::eval::{format_sweep, robustness_sweep, super_resolve, Output};
use frfsr_core::harness::io::{decode_flow, encode_flow};
use frfsr_core::harness::metrics::{psnr, psnr_ssim_y, ssim};
use frfsr_core::harness::train::Trainer;
use frfsr_core::kernels::{dynamic_filter_apply, FilterAffine};
use frfsr_core::losses::{l_disc, l_total, LinearCritic, LossParts, LossWeights};
use frfsr_core::network::{prepare, Frozen, Generator, NetConfig, Stage, SCALE};
use frfsr_core::params::{AdamConfig, ParamStore};
use frfsr_core::{Error, Graph, Result, Shape, Tensor};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn matching_oracle() -> Result<Verdict> {
    let t0 = Instant::now();
    let mut mismatches = 0;
    for seed in 0..100 {
        let lr = rand_tensor(Shape::new(1, 8, 6, 6), 2 * seed);
        let rf = rand_tensor(Shape::new(1, 8, 9, 9), 2 * seed + 1);
        let got = match_features(&lr, &rf, 3)?.indices;
        mismatches += got.iter().zip(brute_force_match(&lr, &rf, 3)).filter(|(a, b)| **a != *b).count();
    }
    let dt = t0.elapsed();
    verdict(mismatches == 0 && dt < Duration::from_secs(10), format!("{mismatches} mismatches over 100 pairs in {dt:.2?}"))
}

fn self_warp() -> Result<Verdict> {
    let enc = TextureEncoder::new(NetConfig::default().frozen_seed)?;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let f = enc.encode(&rand_unit(Shape::new(1, 3, 10, 12), seed))?;
        let flow = match_features(&f, &f, 3)?;
        worst = worst.max(warp_reference(&f, &flow.flow, 1.0)?.max_abs_diff(&f));
    }
    verdict(worst <= 1e-5, format!("max abs diff {worst:.3e} over 20 cases"))
}

fn filter_equivalence() -> Result<Verdict> {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let f = rand_tensor(Shape::new(1, 4, 5, 5), 3 * seed);
        let sp = rand_tensor(Shape::new(1, 9, 5, 5), 3 * seed + 1);
        let ch = rand_tensor(Shape::new(1, 36, 1, 1), 3 * seed + 2);
        let s = seed as f64 / 50.0;
        let a = FilterAffine { gamma_sf: 1.0 + s, beta_sf: 0.1 - s, gamma_cf: 0.5 + s, beta_cf: s };
        worst = worst.max(dynamic_filter_apply(&f, &sp, &ch, a)?.max_abs_diff(&outer_product_filter(&f, &sp, &ch, a)));
    }
    verdict(worst <= 1e-6, format!("max abs diff {worst:.3e} over 50 seeds"))
}

fn gradient_suite() -> Result<Verdict> {
    let t0 = Instant::now();
    let mut worst = vec![0.0f64; common::grads::OPS.len()];
    for seed in 0..5 {
        for (i, r) in common::grads::suite(seed)?.iter().enumerate() {
            worst[i] = worst[i].max(r.max_rel_err);
        }
    }
    let dt = t0.elapsed();
    let bad: Vec<String> = common::grads::OPS.iter().zip(&worst).filter(|(_, e)| **e > 1e-4).map(|(op, e)| format!("{op}={e:.2e}")).collect();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let detail = if bad.is_empty() { format!("8 ops x 5 seeds, worst {max:.2e}, {dt:.1?}") } else { format!("over tolerance: {}", bad.join(" ")) };
    verdict(bad.is_empty() && dt < Duration::from_secs(60), detail)
}

fn small_train_cfg() -> TrainConfig {
    TrainConfig { net: NetConfig::tiny(), disc_widths: vec![8, 16], perceptual_widths: vec![8, 16], ..TrainConfig::default() }
}

fn freeze_contract(data: &[SamplePair]) -> Result<(Verdict, ModelCheckpoint)> {
    let mut t = Trainer::new(small_train_cfg())?;
    t.run_stage1(data, 10)?;
    let ckpt_rec = t.rec_checkpoint();
    let (mut reuse_max, mut net1_max) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let batch = t.sample_batch(data)?;
        let r = t.stage2_step(&batch)?;
        reuse_max = reuse_max.max(r.reuse_grad_max);
        net1_max = net1_max.max(r.net1_grad_max);
    }
    let identical = t.net1.params.iter().all(|(name, p)| {
        let before = ckpt_rec.rec.params.get(name).unwrap();
        p.value.data().iter().zip(before.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let v = Verdict {
        pass: identical && reuse_max == 0.0 && net1_max == 0.0 && t.net2.net.expects_reuse(),
        detail: format!("net1 bit-identical: {identical}, reuse grad max {reuse_max:e}, net1 grad max {net1_max:e}"),
    };
    Ok((v, t.all_checkpoint()))
}

fn identity_init() -> Result<Verdict> {
    let cfg = NetConfig::tiny();
    let frozen = Frozen::new(&cfg)?;
    let pair = &synthetic_pairs(1, 64, 11)?[0];
    let prep = prepare(&frozen, &pair.lr, &pair.reference)?;
    let (net, mut store) = Generator::new(&cfg, Stage::Rec, 5)?;
    net.zero_residual_paths(&mut store)?;
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let out = net.forward(&mut g, &p, &prep, None)?;
    let x = g.constant(prep.lr.clone());
    let f_lr = net.shallow_features(&mut g, &p, x)?;
    let direct = net.upsample_path(&mut g, &p, f_lr)?;
    let d_sr = g.value(out.i_sr).max_abs_diff(g.value(direct));
    let d_taam = g.value(out.aggregated[0]).max_abs_diff(g.value(f_lr));
    verdict(d_sr <= 1e-6 && d_taam <= 1e-6, format!("output diff {d_sr:.2e}, aggregation diff {d_taam:.2e}"))
}

fn convergence(data: &[SamplePair]) -> Result<Verdict> {
    let t0 = Instant::now();
    let adam = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
    let mut t = Trainer::new(TrainConfig { net: NetConfig::tiny(), adam, ..TrainConfig::default() })?;
    let initial = t.rec_loss(data)?;
    t.run_stage1(data, 500)?;
    let ratio = t.rec_loss(data)? / initial;

    let one = &data[..1];
    let cfg = TrainConfig { net: NetConfig::tiny(), adam, batch_size: 1, augment: false, shuffle: ShuffleLevel::None, ..TrainConfig::default() };
    let mut o = Trainer::new(cfg)?;
    o.run_stage1(one, 300)?;
    let ckpt = o.rec_checkpoint();
    let sr = super_resolve(&ckpt, &o.frozen, &one[0].lr, &one[0].reference, Output::Rec)?;
    let (p_sr, _) = psnr_ssim_y(&sr, &one[0].hr)?;
    let bic = bicubic_upsample(&one[0].lr, SCALE)?.map(|v| v.clamp(0.0, 1.0));
    let (p_bic, _) = psnr_ssim_y(&bic, &one[0].hr)?;
    let dt = t0.elapsed();
    verdict(
        ratio <= 0.25 && p_sr >= p_bic + 1.0 && dt < Duration::from_secs(300),
        format!("L_rec ratio {ratio:.3}, overfit {p_sr:.2} dB vs bicubic {p_bic:.2} dB, {dt:.1?}"),
    )
}

fn loss_arithmetic() -> Result<Verdict> {
    let w = LossWeights::default();
    let mut worst = 0.0f64;
    let mut r = rng(3);
    for _ in 0..100 {
        use rand::Rng;
        let parts = LossParts { rec: r.random::<f64>(), per: 100.0 * r.random::<f64>(), adv: 200.0 * r.random::<f64>() - 100.0 };
        worst = worst.max((l_total(parts, w)? - (1.0 * parts.rec + 1e-4 * parts.per + 1e-6 * parts.adv)).abs());
    }
    let mut wt = Tensor::zeros(Shape::new(1, 3, 6, 6));
    for (i, k) in (0..16).map(|i| (i, (i * 5 + 1) % 108)) {
        wt.data_mut()[k] = if i % 2 == 0 { 0.25 } else { -0.25 };
    }
    let mut store = ParamStore::new();
    store.insert("w", vec![1, 3, 6, 6], wt)?;
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let sr = g.constant(rand_unit(Shape::new(4, 3, 6, 6), 1));
    let hr = g.constant(rand_unit(Shape::new(4, 3, 6, 6), 2));
    let d = l_disc(&mut g, &p, sr, hr, &LinearCritic { weight: "w".into() }, 10.0, &mut rng(4))?;
    let pen = g.value(d.penalty).data()[0];
    verdict((w.rec, w.per, w.adv) == (1.0, 1e-4, 1e-6) && worst <= 1e-12 && pen == 0.0, format!("weighted sum error {worst:.1e}, penalty {pen:e}"))
}

fn metrics() -> Result<Verdict> {
    let a = rand_unit(Shape::new(1, 1, 16, 16), 5).map(|v| 0.1 + 0.8 * v);
    let p = psnr(&a, &a.map(|v| v + 1.0 / 255.0))?;
    let s_same = ssim(&a, &a)?;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let x = rand_unit(Shape::new(1, 1, 16, 16), 100 + seed);
        let y = x.map(|v| v * 0.7 + 0.1).zip_map(&rand_unit(Shape::new(1, 1, 16, 16), 200 + seed), "mix", |u, n| u + 0.2 * n)?;
        worst = worst.max((ssim(&x, &y)? - direct_ssim(&x, &y)).abs());
    }
    verdict((p - 48.1308).abs() <= 1e-3 && s_same == 1.0 && worst <= 1e-6, format!("psnr {p:.4} dB, ssim(a,a) {s_same}, ssim vs direct {worst:.1e}"))
}

fn robustness(ckpt: &ModelCheckpoint, data: &[SamplePair]) -> Result<Verdict> {
    let pairs: Vec<NamedPair> = data.iter().take(2).enumerate().map(|(i, p)| NamedPair { name: format!("img{i}"), pair: p.clone() }).collect();
    let rows = robustness_sweep(ckpt, &pairs, 0, Output::All)?;
    let table = format_sweep(&rows);
    print!("{}", table.lines().map(|l| format!("    {l}\n")).collect::<String>());
    let mut preserved = true;
    for level in ShuffleLevel::ALL {
        for (i, p) in data.iter().enumerate() {
            let s = shuffle_patches(&p.reference, level, &mut rng(i as u64))?;
            let mut a = s.data().to_vec();
            let mut b = p.reference.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            preserved &= a == b;
        }
    }
    let levels = rows.iter().map(|r| r.level).collect::<Vec<_>>() == ShuffleLevel::ALL.to_vec();
    verdict(levels && preserved && rows.iter().all(|r| r.psnr.is_finite()), format!("4 levels tabulated, multiset preserved: {preserved}"))
}

fn round_trips(ckpt: &ModelCheckpoint) -> Result<Verdict> {
    let (store, fp) = ckpt.to_store()?;
    let bytes = encode(&store, fp);
    let (back, fp2) = decode(&bytes)?;
    let ckpt_ok = fp2 == fp
        && encode(&back, fp2) == bytes
        && back.iter().all(|(n, p)| p.value.data().iter().zip(store.get(n).unwrap().data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let flow = rand_tensor(Shape::new(1, 2, 7, 5), 9).map(|v| (v * 16.0).round() / 4.0);
    let flo = encode_flow(&flow)?;
    let flow_ok = decode_flow(&flo)?.data().iter().zip(flow.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let mut bad_ck = bytes.clone();
    bad_ck[1] ^= 0xff;
    let mut bad_flo = flo.clone();
    bad_flo[0] ^= 0xff;
    let rejected = matches!(decode(&bad_ck), Err(Error::BadMagic { .. })) && matches!(decode_flow(&bad_flo), Err(Error::BadMagic { .. }));
    verdict(ckpt_ok && flow_ok && rejected, format!("checkpoint {} bytes exact: {ckpt_ok}, flow exact: {flow_ok}, bad magic rejected: {rejected}", bytes.len()))
}

fn report(n: usize, name: &str, r: Result<Verdict>) -> bool {
    let (pass, detail) = match r {
        Ok(v) => (v.pass, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let data = synthetic_pairs(8, 64, 0).expect("synthetic data");
    let mut ok = true;
    ok &= report(1, "matching oracle", matching_oracle());
    ok &= report(2, "self-warp identity", self_warp());
    ok &= report(3, "decoupled filter", filter_equivalence());
    ok &= report(4, "gradient suite", gradient_suite());
    let (v5, ckpt) = match freeze_contract(&data) {
        Ok((v, c)) => (Ok(v), Some(c)),
        Err(e) => (Err(e), None),
    };
    ok &= report(5, "feature reuse freeze", v5);
    ok &= report(6, "identity initialization", identity_init());
    ok &= report(7, "convergence smoke", convergence(&data));
    ok &= report(8, "loss arithmetic", loss_arithmetic());
    ok &= report(9, "metrics", metrics());
    match &ckpt {
        Some(c) => {
            ok &= report(10, "robustness protocol", robustness(c, &data));
            ok &= report(11, "round trips", round_trips(c));
        }
        None => {
            ok &= report(10, "robustness protocol", verdict(false, "no checkpoint"));
            ok &= report(11, "round trips", verdict(false, "no checkpoint"));
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
