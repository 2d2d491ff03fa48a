//! Luma conversion, PSNR and SSIM.

use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// BT.601 studio-swing luma of an RGB batch in `[0, 1]`, shape `(n, 1, h, w)`.
pub fn rgb_to_y(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.c != 3 {
        return Err(shape_err("rgb_to_y", format!("expected 3 channels, got {s}")));
    }
    Ok(Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, y, x| {
        (65.481 * image.at(n, 0, y, x) + 128.553 * image.at(n, 1, y, x) + 24.966 * image.at(n, 2, y, x) + 16.0) / 255.0
    }))
}

/// `10 log10(1 / mse)`; identical inputs give `+inf`.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err("psnr", format!("{} vs {}", a.shape(), b.shape())));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable Gaussian filter of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over every valid 11x11 window of every plane.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() {
        return Err(shape_err("ssim", format!("{s} vs {}", b.shape())));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(shape_err("ssim", format!("{}x{} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", s.h, s.w)));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let (pa, pb) = (a.plane(n, c), b.plane(n, c));
            let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
            let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
            let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
            let mu_a = filter_valid(pa, s.h, s.w, &k);
            let mu_b = filter_valid(pb, s.h, s.w, &k);
            let e_aa = filter_valid(&aa, s.h, s.w, &k);
            let e_bb = filter_valid(&bb, s.h, s.w, &k);
            let e_ab = filter_valid(&ab, s.h, s.w, &k);
            for i in 0..mu_a.len() {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = e_aa[i] - ma * ma;
                let vb = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            }
            count += mu_a.len();
        }
    }
    Ok(total / count as f64)
}

/// PSNR and SSIM on the luma of two RGB batches.
pub fn psnr_ssim_y(a: &Tensor, b: &Tensor) -> Result<(f64, f64)> {
    let (ya, yb) = (rgb_to_y(a)?, rgb_to_y(b)?);
    Ok((psnr(&ya, &yb)?, ssim(&ya, &yb)?))
}
