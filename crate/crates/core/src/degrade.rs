//! Bicubic resampling in the antialiased convention of common imaging
//! libraries: kernel `a = -0.5`, support stretched by the reduction factor,
//! taps clipped to the image and renormalized.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Shape, Tensor};

const A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Per output index: first source index and normalized weights.
fn taps(in_len: usize, out_len: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = in_len as f64 / out_len as f64;
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).trunc().max(0.0)) as usize;
            let hi = ((center + support + 0.5).trunc() as usize).min(in_len);
            let mut w: Vec<f64> = (lo..hi).map(|j| cubic((j as f64 - center + 0.5) / filter_scale)).collect();
            let total: f64 = w.iter().sum();
            if total != 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect()
}

/// Separable bicubic resize to `h_out x w_out` (horizontal pass first), unclamped.
pub fn bicubic_resize(input: &Tensor, h_out: usize, w_out: usize) -> Result<Tensor> {
    if h_out == 0 || w_out == 0 {
        return Err(arg_err("bicubic_resize", "output size must be positive"));
    }
    let s = input.shape();
    let tx = taps(s.w, w_out);
    let ty = taps(s.h, h_out);
    let mid = Tensor::from_fn(Shape::new(s.n, s.c, s.h, w_out), |n, c, y, x| {
        let (lo, w) = &tx[x];
        let row = &input.plane(n, c)[y * s.w..(y + 1) * s.w];
        w.iter().enumerate().map(|(k, wk)| wk * row[lo + k]).sum()
    });
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, h_out, w_out), |n, c, y, x| {
        let (lo, w) = &ty[y];
        let plane = mid.plane(n, c);
        w.iter().enumerate().map(|(k, wk)| wk * plane[(lo + k) * w_out + x]).sum()
    }))
}

/// Bicubic reduction by an integer factor, clamped to `[0, 1]`.
pub fn bicubic_downsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    let s = input.shape();
    if factor == 0 || !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return Err(shape_err("bicubic_downsample", format!("{s} not divisible by factor {factor}")));
    }
    Ok(bicubic_resize(input, s.h / factor, s.w / factor)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Bicubic enlargement by an integer factor, clamped to `[0, 1]`.
pub fn bicubic_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(arg_err("bicubic_upsample", "factor must be positive"));
    }
    let s = input.shape();
    Ok(bicubic_resize(input, s.h * factor, s.w * factor)?.map(|v| v.clamp(0.0, 1.0)))
}
