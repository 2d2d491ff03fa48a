//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use frfsr_core::kernels::FilterAffine;
use frfsr_core::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: Shape, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng(seed))
}

pub fn rand_unit(shape: Shape, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, 0.0, 1.0, &mut rng(seed))
}

/// Direct seven-loop cross-correlation with zero padding.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&[f64]>, stride: usize, pad: usize, dil: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let oh = (xs.h + 2 * pad - dil * (ws.h - 1) - 1) / stride + 1;
    let ow = (xs.w + 2 * pad - dil * (ws.w - 1) - 1) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for c in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (y * stride + ky * dil) as isize - pad as isize;
                                let ix = (xx * stride + kx * dil) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += w.at(o, c, ky, kx) * x.at(n, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(n, o, y, xx, acc);
                }
            }
        }
    }
    out
}

/// Exhaustive patch matching: every LR pixel against every Ref pixel, 3x3
/// zero-padded patches, cosine similarity, first maximum wins.
pub fn brute_force_match(lr: &Tensor, reference: &Tensor, k: usize) -> Vec<usize> {
    let r = (k / 2) as isize;
    let patch = |t: &Tensor, y: usize, x: usize| -> Vec<f64> {
        let s = t.shape();
        let mut v = Vec::new();
        for c in 0..s.c {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    v.push(if yy >= 0 && xx >= 0 && (yy as usize) < s.h && (xx as usize) < s.w { t.at(0, c, yy as usize, xx as usize) } else { 0.0 });
                }
            }
        }
        v
    };
    let cos = |a: &[f64], b: &[f64]| {
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        }
    };
    let (ls, rs) = (lr.shape(), reference.shape());
    let refs: Vec<Vec<f64>> = (0..rs.h * rs.w).map(|j| patch(reference, j / rs.w, j % rs.w)).collect();
    (0..ls.h * ls.w)
        .map(|i| {
            let q = patch(lr, i / ls.w, i % ls.w);
            let mut best = (0, f64::NEG_INFINITY);
            for (j, kk) in refs.iter().enumerate() {
                let s = cos(&q, kk);
                if s > best.1 {
                    best = (j, s);
                }
            }
            best.0
        })
        .collect()
}

/// Materialize `omega(c, t, y, x)` and apply it as a per-pixel, per-channel 3x3 filter.
pub fn outer_product_filter(f: &Tensor, sp: &Tensor, ch: &Tensor, a: FilterAffine) -> Tensor {
    let s = f.shape();
    let mut omega = vec![0.0; s.n * s.c * 9 * s.h * s.w];
    let idx = |n: usize, c: usize, t: usize, y: usize, x: usize| (((n * s.c + c) * 9 + t) * s.h + y) * s.w + x;
    for n in 0..s.n {
        for c in 0..s.c {
            for t in 0..9 {
                for y in 0..s.h {
                    for x in 0..s.w {
                        omega[idx(n, c, t, y, x)] = (a.gamma_sf * sp.at(n, t, y, x) + a.beta_sf) * (a.gamma_cf * ch.at(n, c * 9 + t, 0, 0) + a.beta_cf);
                    }
                }
            }
        }
    }
    Tensor::from_fn(s, |n, c, y, x| {
        let mut acc = 0.0;
        for t in 0..9 {
            let (dy, dx) = ((t / 3) as isize - 1, (t % 3) as isize - 1);
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < s.h && (xx as usize) < s.w {
                acc += omega[idx(n, c, t, y, x)] * f.at(n, c, yy as usize, xx as usize);
            }
        }
        acc
    })
}

/// SSIM from the definition: a normalized 2-D Gaussian window evaluated
/// directly at every valid position of every plane.
pub fn direct_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let mut win = [[0.0f64; 11]; 11];
    let mut total_w = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total_w += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut count = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..=s.h - 11 {
                for x in 0..=s.w - 11 {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = win[i][j] / total_w;
                            ma += w * a.at(n, c, y + i, x + j);
                            mb += w * b.at(n, c, y + i, x + j);
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = win[i][j] / total_w;
                            let (da, db) = (a.at(n, c, y + i, x + j) - ma, b.at(n, c, y + i, x + j) - mb);
                            va += w * da * da;
                            vb += w * db * db;
                            cov += w * da * db;
                        }
                    }
                    sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    sum / count as f64
}

/// Separable antialiased bicubic (a = -0.5) resize of one plane, written
/// from the kernel formula: support scaled by the reduction factor, taps
/// clipped to the image and renormalized, horizontal pass first.
pub fn scalar_bicubic(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    fn kernel(x: f64) -> f64 {
        let a = -0.5;
        let x = x.abs();
        if x < 1.0 {
            ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
        } else if x < 2.0 {
            (((x - 5.0) * x + 8.0) * x - 4.0) * a
        } else {
            0.0
        }
    }
    fn weights(i: usize, inl: usize, outl: usize) -> Vec<(usize, f64)> {
        let scale = inl as f64 / outl as f64;
        let fs = scale.max(1.0);
        let center = (i as f64 + 0.5) * scale;
        let support = 2.0 * fs;
        let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
        let hi = ((center + support + 0.5).floor() as usize).min(inl);
        let raw: Vec<(usize, f64)> = (lo..hi).map(|j| (j, kernel((j as f64 - center + 0.5) / fs))).collect();
        let s: f64 = raw.iter().map(|p| p.1).sum();
        raw.into_iter().map(|(j, v)| (j, v / s)).collect()
    }
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = weights(x, w, ow).iter().map(|&(j, v)| v * plane[y * w + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = weights(y, h, oh).iter().map(|&(j, v)| v * tmp[j * ow + x]).sum();
        }
    }
    out
}

pub mod grads;
