//! Decoupled dynamic filtering: a per-pixel spatial filter times a per-channel
//! filter over each 3x3 window, with filter normalization and the learnable
//! per-branch affine folded into the tap weights.

use crate::error::{shape_err, Result};
use crate::par;
use crate::tensor::{Shape, Tensor};

/// Taps per dynamic filter (3x3 window).
pub const TAPS: usize = 9;

/// Regularizer of filter normalization.
pub const FN_EPS: f64 = 1e-5;

/// Per-branch affine `(gamma_sf, beta_sf, gamma_cf, beta_cf)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterAffine {
    pub gamma_sf: f64,
    pub beta_sf: f64,
    pub gamma_cf: f64,
    pub beta_cf: f64,
}

impl Default for FilterAffine {
    fn default() -> Self {
        FilterAffine { gamma_sf: 1.0, beta_sf: 0.0, gamma_cf: 1.0, beta_cf: 0.0 }
    }
}

/// Standardize consecutive channel groups of size `t` at every pixel:
/// zero mean, unit (eps-regularized) population std. Returns the output and
/// the per-group `1/sigma`.
pub fn standardize_groups(x: &Tensor, t: usize, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let s = x.shape();
    if t == 0 || !s.c.is_multiple_of(t) {
        return Err(shape_err("filter_norm", format!("{} channels not divisible into groups of {t}", s.c)));
    }
    let groups = s.c / t;
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let mut inv = vec![0.0; s.n * groups * p];
    for n in 0..s.n {
        for g in 0..groups {
            for px in 0..p {
                let at = |j: usize| ((n * s.c + g * t + j) * p) + px;
                let mean = (0..t).map(|j| x.data()[at(j)]).sum::<f64>() / t as f64;
                let var = (0..t).map(|j| (x.data()[at(j)] - mean).powi(2)).sum::<f64>() / t as f64;
                let is = 1.0 / (var + eps).sqrt();
                for j in 0..t {
                    out.data_mut()[at(j)] = (x.data()[at(j)] - mean) * is;
                }
                inv[(n * groups + g) * p + px] = is;
            }
        }
    }
    Ok((out, inv))
}

/// `dx = inv_std * (dy - mean(dy) - y * mean(dy * y))` per group.
pub(crate) fn standardize_backward(y: &Tensor, inv: &[f64], t: usize, gout: &Tensor) -> Tensor {
    let s = y.shape();
    let groups = s.c / t;
    let p = s.plane();
    let mut gx = Tensor::zeros(s);
    for n in 0..s.n {
        for g in 0..groups {
            for px in 0..p {
                let at = |j: usize| ((n * s.c + g * t + j) * p) + px;
                let mg = (0..t).map(|j| gout.data()[at(j)]).sum::<f64>() / t as f64;
                let mgy = (0..t).map(|j| gout.data()[at(j)] * y.data()[at(j)]).sum::<f64>() / t as f64;
                let is = inv[(n * groups + g) * p + px];
                for j in 0..t {
                    gx.data_mut()[at(j)] = is * (gout.data()[at(j)] - mg - y.data()[at(j)] * mgy);
                }
            }
        }
    }
    gx
}

pub(crate) fn check_dynamic(f: Shape, spatial: Shape, channel: Shape) -> Result<()> {
    const OP: &str = "dynamic_filter_apply";
    if spatial != Shape::new(f.n, TAPS, f.h, f.w) {
        return Err(shape_err(OP, format!("spatial filters must be {}x9x{}x{}, got {spatial}", f.n, f.h, f.w)));
    }
    if channel != Shape::new(f.n, f.c * TAPS, 1, 1) {
        return Err(shape_err(OP, format!("channel filters must be {}x{}x1x1, got {channel}", f.n, f.c * TAPS)));
    }
    Ok(())
}

#[inline]
fn tap_delta(t: usize) -> (isize, isize) {
    ((t / 3) as isize - 1, (t % 3) as isize - 1)
}

/// `out(k, i) = sum_t (gs*S(t,i) + bs) * (gc*C(k,t) + bc) * F(k, i + d_t)`, zero padded.
pub fn dynamic_filter_apply(f: &Tensor, spatial: &Tensor, channel: &Tensor, aff: FilterAffine) -> Result<Tensor> {
    let fs = f.shape();
    check_dynamic(fs, spatial.shape(), channel.shape())?;
    let (h, w) = (fs.h, fs.w);
    let mut out = Tensor::zeros(fs);
    par::for_each_chunk(out.data_mut(), fs.sample(), |n, dst| {
        let sp = spatial.sample(n);
        let ch = channel.sample(n);
        for k in 0..fs.c {
            let src = f.plane(n, k);
            let b: Vec<f64> = (0..TAPS).map(|t| aff.gamma_cf * ch[k * TAPS + t] + aff.beta_cf).collect();
            let plane = &mut dst[k * h * w..(k + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let mut acc = 0.0;
                    for (t, bt) in b.iter().enumerate() {
                        let (dy, dx) = tap_delta(t);
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        let a = aff.gamma_sf * sp[t * h * w + i] + aff.beta_sf;
                        acc += a * bt * src[yy as usize * w + xx as usize];
                    }
                    plane[i] = acc;
                }
            }
        }
    });
    Ok(out)
}

pub(crate) struct DynamicGrads {
    pub f: Tensor,
    pub spatial: Tensor,
    pub channel: Tensor,
    /// `(gamma_sf, beta_sf, gamma_cf, beta_cf)`.
    pub affine: [f64; 4],
}

pub(crate) fn dynamic_filter_backward(f: &Tensor, spatial: &Tensor, channel: &Tensor, aff: FilterAffine, gout: &Tensor) -> DynamicGrads {
    let fs = f.shape();
    let (h, w) = (fs.h, fs.w);
    let l = h * w;
    let parts: Vec<_> = par::map_range(fs.n, |n| {
        let sp = spatial.sample(n);
        let ch = channel.sample(n);
        let mut gf = vec![0.0; fs.sample()];
        let mut da = vec![0.0; TAPS * l];
        let mut db = vec![0.0; fs.c * TAPS];
        for k in 0..fs.c {
            let src = f.plane(n, k);
            let g = gout.plane(n, k);
            for t in 0..TAPS {
                let bt = aff.gamma_cf * ch[k * TAPS + t] + aff.beta_cf;
                let (dy, dx) = tap_delta(t);
                let mut dbt = 0.0;
                for y in 0..h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let xx = x as isize + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let i = y * w + x;
                        let j = yy as usize * w + xx as usize;
                        let a = aff.gamma_sf * sp[t * l + i] + aff.beta_sf;
                        let v = src[j];
                        gf[k * l + j] += g[i] * a * bt;
                        da[t * l + i] += g[i] * bt * v;
                        dbt += g[i] * a * v;
                    }
                }
                db[k * TAPS + t] = dbt;
            }
        }
        (gf, da, db)
    });
    let mut gf = Vec::with_capacity(fs.numel());
    let mut gs = Vec::with_capacity(spatial.numel());
    let mut gc = Vec::with_capacity(channel.numel());
    let mut affine = [0.0; 4];
    for (n, (a, da, db)) in parts.into_iter().enumerate() {
        gf.extend(a);
        let sp = spatial.sample(n);
        let ch = channel.sample(n);
        for (d, s) in da.iter().zip(sp) {
            gs.push(aff.gamma_sf * d);
            affine[0] += d * s;
            affine[1] += d;
        }
        for (d, c) in db.iter().zip(ch) {
            gc.push(aff.gamma_cf * d);
            affine[2] += d * c;
            affine[3] += d;
        }
    }
    DynamicGrads {
        f: Tensor::from_vec(fs, gf).expect("shape"),
        spatial: Tensor::from_vec(spatial.shape(), gs).expect("shape"),
        channel: Tensor::from_vec(channel.shape(), gc).expect("shape"),
        affine,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_filters(f: Shape) -> (Tensor, Tensor) {
        let s = Tensor::from_fn(Shape::new(f.n, TAPS, f.h, f.w), |_, t, _, _| if t == 4 { 1.0 } else { 0.0 });
        let c = Tensor::from_fn(Shape::new(f.n, f.c * TAPS, 1, 1), |_, kt, _, _| if kt % TAPS == 4 { 1.0 } else { 0.0 });
        (s, c)
    }

    #[test]
    fn delta_filters_are_identity() {
        let f = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, c, y, x| (n + 2 * c + 3 * y) as f64 - x as f64 * 0.5);
        let (s, c) = delta_filters(f.shape());
        let out = dynamic_filter_apply(&f, &s, &c, FilterAffine::default()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn uniform_spatial_is_box_blur() {
        let f = Tensor::from_fn(Shape::new(1, 2, 4, 4), |_, c, y, x| ((c + 1) * (y * 4 + x)) as f64);
        let s = Tensor::full(Shape::new(1, TAPS, 4, 4), 1.0 / 9.0);
        let c = Tensor::full(Shape::new(1, 2 * TAPS, 1, 1), 1.0);
        let out = dynamic_filter_apply(&f, &s, &c, FilterAffine::default()).unwrap();
        for ch in 0..2 {
            for y in 0..4usize {
                for x in 0..4usize {
                    let mut sum = 0.0;
                    for yy in y.saturating_sub(1)..(y + 2).min(4) {
                        for xx in x.saturating_sub(1)..(x + 2).min(4) {
                            sum += f.at(0, ch, yy, xx);
                        }
                    }
                    assert!((out.at(0, ch, y, x) - sum / 9.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn standardized_groups_have_zero_mean_unit_std() {
        let x = Tensor::from_fn(Shape::new(2, 18, 3, 2), |n, c, y, x| ((n * 7 + c * 13 + y * 5 + x * 3) % 17) as f64 * 0.31 - 2.0);
        let (y, _) = standardize_groups(&x, 9, FN_EPS).unwrap();
        for n in 0..2 {
            for g in 0..2 {
                for py in 0..3 {
                    for px in 0..2 {
                        let v: Vec<f64> = (0..9).map(|t| y.at(n, g * 9 + t, py, px)).collect();
                        let mean = v.iter().sum::<f64>() / 9.0;
                        let std = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
                        assert!(mean.abs() < 1e-12);
                        assert!((std - 1.0).abs() < 1e-5, "std {std}");
                    }
                }
            }
        }
    }

    #[test]
    fn mismatched_filters_rejected() {
        let f = Tensor::zeros(Shape::new(1, 4, 5, 5));
        let s = Tensor::zeros(Shape::new(1, 9, 5, 4));
        let c = Tensor::zeros(Shape::new(1, 36, 1, 1));
        assert!(dynamic_filter_apply(&f, &s, &c, FilterAffine::default()).is_err());
    }
}
