//! Bilinear sampling: normalized-grid warping, align-corners resizing and
//! modulated deformable sampling. Out-of-range corners contribute zero.

use crate::error::{shape_err, Result};
use crate::kernels::gemm::{gemm, Layout};
use crate::par;
use crate::tensor::{Shape, Tensor};

/// Bilinear footprint of one sampling position on an `h x w` plane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Footprint {
    /// Flat plane index of each corner, or `usize::MAX` when out of range.
    pub idx: [usize; 4],
    pub wt: [f64; 4],
    /// d(weight)/dx and d(weight)/dy per corner.
    pub dx: [f64; 4],
    pub dy: [f64; 4],
}

const OUT: usize = usize::MAX;

impl Footprint {
    pub fn new(h: usize, w: usize, px: f64, py: f64) -> Self {
        let x0f = px.floor();
        let y0f = py.floor();
        let fx = px - x0f;
        let fy = py - y0f;
        let x0 = x0f as i64;
        let y0 = y0f as i64;
        let corner = |yy: i64, xx: i64| {
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                yy as usize * w + xx as usize
            } else {
                OUT
            }
        };
        Footprint {
            idx: [corner(y0, x0), corner(y0, x0 + 1), corner(y0 + 1, x0), corner(y0 + 1, x0 + 1)],
            wt: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
            dx: [-(1.0 - fy), 1.0 - fy, -fy, fy],
            dy: [-(1.0 - fx), -fx, 1.0 - fx, fx],
        }
    }

    #[inline]
    pub fn sample(&self, plane: &[f64]) -> f64 {
        let mut v = 0.0;
        for k in 0..4 {
            if self.idx[k] != OUT {
                v += self.wt[k] * plane[self.idx[k]];
            }
        }
        v
    }

    /// `(dv/dx, dv/dy)` at the sampling position.
    #[inline]
    pub fn grad(&self, plane: &[f64]) -> (f64, f64) {
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in 0..4 {
            if self.idx[k] != OUT {
                gx += self.dx[k] * plane[self.idx[k]];
                gy += self.dy[k] * plane[self.idx[k]];
            }
        }
        (gx, gy)
    }

    #[inline]
    pub fn scatter(&self, plane: &mut [f64], g: f64) {
        for k in 0..4 {
            if self.idx[k] != OUT {
                plane[self.idx[k]] += self.wt[k] * g;
            }
        }
    }
}

/// Half-extent used by the normalized coordinate convention: `max(len - 1, 1) / 2`.
#[inline]
pub(crate) fn half_extent(len: usize) -> f64 {
    (len.saturating_sub(1)).max(1) as f64 / 2.0
}

/// Normalized `[-1, 1]` coordinate to pixel coordinate.
#[inline]
pub fn denormalize(g: f64, len: usize) -> f64 {
    (g + 1.0) * half_extent(len)
}

/// Pixel coordinate to normalized `[-1, 1]` coordinate.
#[inline]
pub fn normalize(p: f64, len: usize) -> f64 {
    p / half_extent(len) - 1.0
}

fn check_grid(input: Shape, grid: Shape) -> Result<()> {
    if grid.c != 2 {
        return Err(shape_err("grid_sample_bilinear", format!("grid must have 2 channels, got {grid}")));
    }
    if grid.n != input.n {
        return Err(shape_err("grid_sample_bilinear", format!("grid batch {} vs input batch {}", grid.n, input.n)));
    }
    Ok(())
}

/// Bilinear sampling of `input` at normalized positions `grid` (`(n, 2, h_out, w_out)`,
/// plane 0 = x, plane 1 = y). Corners outside the input read as zero.
pub fn grid_sample_bilinear(input: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let is = input.shape();
    let gs = grid.shape();
    check_grid(is, gs)?;
    let os = Shape::new(is.n, is.c, gs.h, gs.w);
    let mut out = Tensor::zeros(os);
    let lo = gs.plane();
    par::for_each_chunk(out.data_mut(), os.sample(), |n, dst| {
        let gx = grid.plane(n, 0);
        let gy = grid.plane(n, 1);
        for p in 0..lo {
            let fp = Footprint::new(is.h, is.w, denormalize(gx[p], is.w), denormalize(gy[p], is.h));
            for c in 0..is.c {
                dst[c * lo + p] = fp.sample(input.plane(n, c));
            }
        }
    });
    Ok(out)
}

/// Gradients of [`grid_sample_bilinear`] with respect to input and grid.
pub(crate) fn grid_sample_backward(input: &Tensor, grid: &Tensor, gout: &Tensor) -> (Tensor, Tensor) {
    let is = input.shape();
    let gs = grid.shape();
    let lo = gs.plane();
    let (sx, sy) = (half_extent(is.w), half_extent(is.h));
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(is.n, |n| {
        let gx = grid.plane(n, 0);
        let gy = grid.plane(n, 1);
        let mut gin = vec![0.0; is.sample()];
        let mut ggrid = vec![0.0; 2 * lo];
        for p in 0..lo {
            let fp = Footprint::new(is.h, is.w, denormalize(gx[p], is.w), denormalize(gy[p], is.h));
            let (mut ax, mut ay) = (0.0, 0.0);
            for c in 0..is.c {
                let g = gout.plane(n, c)[p];
                if g == 0.0 {
                    continue;
                }
                fp.scatter(&mut gin[c * is.plane()..(c + 1) * is.plane()], g);
                let (dx, dy) = fp.grad(input.plane(n, c));
                ax += g * dx;
                ay += g * dy;
            }
            ggrid[p] = ax * sx;
            ggrid[lo + p] = ay * sy;
        }
        (gin, ggrid)
    });
    let mut gi = Vec::with_capacity(is.numel());
    let mut gg = Vec::with_capacity(gs.numel());
    for (a, b) in per_sample {
        gi.extend(a);
        gg.extend(b);
    }
    (Tensor::from_vec(is, gi).expect("shape"), Tensor::from_vec(gs, gg).expect("shape"))
}

/// Align-corners source coordinate of destination index `d`.
#[inline]
fn ac_src(d: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len > 1 {
        d as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    } else {
        0.0
    }
}

#[inline]
fn ac_taps(d: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = ac_src(d, src_len, dst_len);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize with the align-corners convention.
pub fn resize_bilinear(input: &Tensor, h_out: usize, w_out: usize) -> Result<Tensor> {
    let is = input.shape();
    if h_out == 0 || w_out == 0 {
        return Err(shape_err("resize_bilinear", format!("target size {h_out}x{w_out} must be >= 1")));
    }
    let os = Shape::new(is.n, is.c, h_out, w_out);
    let xt: Vec<_> = (0..w_out).map(|x| ac_taps(x, is.w, w_out)).collect();
    let yt: Vec<_> = (0..h_out).map(|y| ac_taps(y, is.h, h_out)).collect();
    let mut out = Tensor::zeros(os);
    par::for_each_chunk(out.data_mut(), os.plane(), |nc, dst| {
        let src = &input.data()[nc * is.plane()..(nc + 1) * is.plane()];
        for (y, &(y0, y1, fy)) in yt.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
                let top = src[y0 * is.w + x0] * (1.0 - fx) + src[y0 * is.w + x1] * fx;
                let bot = src[y1 * is.w + x0] * (1.0 - fx) + src[y1 * is.w + x1] * fx;
                dst[y * w_out + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    });
    Ok(out)
}

pub(crate) fn resize_bilinear_backward(is: Shape, gout: &Tensor) -> Tensor {
    let os = gout.shape();
    let xt: Vec<_> = (0..os.w).map(|x| ac_taps(x, is.w, os.w)).collect();
    let yt: Vec<_> = (0..os.h).map(|y| ac_taps(y, is.h, os.h)).collect();
    let mut gin = Tensor::zeros(is);
    par::for_each_chunk(gin.data_mut(), is.plane(), |nc, dst| {
        let g = &gout.data()[nc * os.plane()..(nc + 1) * os.plane()];
        for (y, &(y0, y1, fy)) in yt.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
                let v = g[y * os.w + x];
                dst[y0 * is.w + x0] += v * (1.0 - fx) * (1.0 - fy);
                dst[y0 * is.w + x1] += v * fx * (1.0 - fy);
                dst[y1 * is.w + x0] += v * (1.0 - fx) * fy;
                dst[y1 * is.w + x1] += v * fx * fy;
            }
        }
    });
    gin
}

/// Number of taps of the 3x3 deformable kernel.
pub const DEFORM_TAPS: usize = 9;

/// Tap `k` as `(dy, dx)` in `{-1, 0, 1}^2`, row-major.
#[inline]
pub fn tap_offset(k: usize) -> (f64, f64) {
    ((k / 3) as f64 - 1.0, (k % 3) as f64 - 1.0)
}

pub(crate) fn deform_check(y: Shape, pre: Shape, off: Shape, modv: Shape, w: Shape) -> Result<Shape> {
    const OP: &str = "deformable_sample";
    if w.h != 3 || w.w != 3 {
        return Err(shape_err(OP, format!("kernel must be 3x3, got {}x{}", w.h, w.w)));
    }
    if w.c != y.c {
        return Err(shape_err(OP, format!("kernel in_c {} vs feature channels {}", w.c, y.c)));
    }
    let (h, wd) = (pre.h, pre.w);
    if pre.c != 2 || pre.n != y.n {
        return Err(shape_err(OP, format!("pre-offset must be ({}, 2, h, w), got {pre}", y.n)));
    }
    if off != Shape::new(y.n, 2 * DEFORM_TAPS, h, wd) {
        return Err(shape_err(OP, format!("offsets must be {}x18x{h}x{wd}, got {off}", y.n)));
    }
    if modv != Shape::new(y.n, DEFORM_TAPS, h, wd) {
        return Err(shape_err(OP, format!("modulation must be {}x9x{h}x{wd}, got {modv}", y.n)));
    }
    Ok(Shape::new(y.n, w.n, h, wd))
}

/// Sampling position of tap `k` at output pixel `p`.
#[inline]
fn deform_pos(n: usize, k: usize, p: usize, wd: usize, pre: &Tensor, off: &Tensor) -> (f64, f64) {
    let (ty, tx) = tap_offset(k);
    let (py, px) = ((p / wd) as f64, (p % wd) as f64);
    let x = px + pre.plane(n, 0)[p] + tx + off.plane(n, 2 * k)[p];
    let y = py + pre.plane(n, 1)[p] + ty + off.plane(n, 2 * k + 1)[p];
    (x, y)
}

/// Integer cells of every deformable sampling position, for kink detection.
pub(crate) fn deform_cells(pre: &Tensor, off: &Tensor) -> Vec<i64> {
    let s = pre.shape();
    let l = s.plane();
    let mut cells = Vec::with_capacity(s.n * DEFORM_TAPS * l * 2);
    for n in 0..s.n {
        for k in 0..DEFORM_TAPS {
            for p in 0..l {
                let (x, y) = deform_pos(n, k, p, s.w, pre, off);
                cells.push(x.floor() as i64);
                cells.push(y.floor() as i64);
            }
        }
    }
    cells
}

/// Modulated sample matrix `(c*9) x (h*w)` for sample `n`.
fn deform_cols(y: &Tensor, n: usize, pre: &Tensor, off: &Tensor, modv: &Tensor, out: Shape) -> Vec<f64> {
    let ys = y.shape();
    let l = out.plane();
    let mut col = vec![0.0; ys.c * DEFORM_TAPS * l];
    for k in 0..DEFORM_TAPS {
        let m = modv.plane(n, k);
        for p in 0..l {
            let (px, py) = deform_pos(n, k, p, out.w, pre, off);
            let fp = Footprint::new(ys.h, ys.w, px, py);
            for c in 0..ys.c {
                col[(c * DEFORM_TAPS + k) * l + p] = m[p] * fp.sample(y.plane(n, c));
            }
        }
    }
    col
}

/// `out(p) = sum_k w_k * y(p + pre(p) + P_k + off_k(p)) * m_k(p) + b`.
///
/// Offsets are laid out as `(dx_0, dy_0, dx_1, dy_1, ...)` in pixel units.
pub fn deformable_sample(y: &Tensor, pre: &Tensor, off: &Tensor, modv: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let out_shape = deform_check(y.shape(), pre.shape(), off.shape(), modv.shape(), weight.shape())?;
    let ws = weight.shape();
    let k = ws.c * DEFORM_TAPS;
    let l = out_shape.plane();
    let mut out = Tensor::zeros(out_shape);
    par::for_each_chunk(out.data_mut(), out_shape.sample(), |n, dst| {
        let col = deform_cols(y, n, pre, off, modv, out_shape);
        if let Some(b) = bias {
            for (co, row) in dst.chunks_mut(l).enumerate() {
                row.fill(b[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(ws.n, k, l, weight.data(), Layout::row(k), &col, Layout::row(l), dst, l, beta);
    });
    Ok(out)
}

pub(crate) struct DeformGrads {
    pub y: Tensor,
    pub off: Tensor,
    pub modv: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

pub(crate) fn deformable_backward(y: &Tensor, pre: &Tensor, off: &Tensor, modv: &Tensor, weight: &Tensor, gout: &Tensor) -> DeformGrads {
    let ys = y.shape();
    let ws = weight.shape();
    let os = gout.shape();
    let kk = ws.c * DEFORM_TAPS;
    let l = os.plane();
    let parts: Vec<_> = par::map_range(ys.n, |n| {
        let col = deform_cols(y, n, pre, off, modv, os);
        let g = gout.sample(n);
        let mut gw = vec![0.0; ws.n * kk];
        gemm(ws.n, l, kk, g, Layout::row(l), &col, Layout::col(l), &mut gw, kk, 0.0);
        let mut gcol = vec![0.0; kk * l];
        gemm(kk, ws.n, l, weight.data(), Layout::col(kk), g, Layout::row(l), &mut gcol, l, 0.0);
        let mut gy = vec![0.0; ys.sample()];
        let mut goff = vec![0.0; 2 * DEFORM_TAPS * l];
        let mut gm = vec![0.0; DEFORM_TAPS * l];
        for k in 0..DEFORM_TAPS {
            let m = modv.plane(n, k);
            for p in 0..l {
                let (px, py) = deform_pos(n, k, p, os.w, pre, off);
                let fp = Footprint::new(ys.h, ys.w, px, py);
                let (mut ax, mut ay, mut am) = (0.0, 0.0, 0.0);
                for c in 0..ys.c {
                    let gc = gcol[(c * DEFORM_TAPS + k) * l + p];
                    if gc == 0.0 {
                        continue;
                    }
                    let plane = y.plane(n, c);
                    am += gc * fp.sample(plane);
                    let (dx, dy) = fp.grad(plane);
                    ax += gc * m[p] * dx;
                    ay += gc * m[p] * dy;
                    fp.scatter(&mut gy[c * ys.plane()..(c + 1) * ys.plane()], gc * m[p]);
                }
                gm[k * l + p] = am;
                goff[2 * k * l + p] = ax;
                goff[(2 * k + 1) * l + p] = ay;
            }
        }
        (gy, goff, gm, gw)
    });
    let mut gy = Vec::with_capacity(ys.numel());
    let mut goff = Vec::with_capacity(off.numel());
    let mut gm = Vec::with_capacity(modv.numel());
    let mut gw = vec![0.0; ws.numel()];
    for (a, b, c, d) in parts {
        gy.extend(a);
        goff.extend(b);
        gm.extend(c);
        for (acc, v) in gw.iter_mut().zip(d) {
            *acc += v;
        }
    }
    DeformGrads {
        y: Tensor::from_vec(ys, gy).expect("shape"),
        off: Tensor::from_vec(off.shape(), goff).expect("shape"),
        modv: Tensor::from_vec(modv.shape(), gm).expect("shape"),
        weight: Tensor::from_vec(ws, gw).expect("shape"),
        bias: crate::kernels::conv::conv2d_bias_grad(gout),
    }
}
