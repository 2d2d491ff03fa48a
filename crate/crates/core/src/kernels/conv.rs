//! 2-D cross-correlation with zero padding, lowered to im2col + GEMM.

use crate::error::{shape_err, Result};
use crate::kernels::gemm::{gemm, Layout};
use crate::par;
use crate::tensor::{Shape, Tensor};

/// Stride, zero padding and dilation of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom { stride, padding, dilation }
    }

    /// Stride 1, padding `k / 2`: preserves spatial size for odd `k`.
    pub const fn same(k: usize) -> Self {
        ConvGeom { stride: 1, padding: k / 2, dilation: 1 }
    }

    pub const fn valid() -> Self {
        ConvGeom { stride: 1, padding: 0, dilation: 1 }
    }

    /// Output length along one axis, or `None` when it would be < 1.
    pub fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = len + 2 * self.padding;
        if self.stride == 0 || self.dilation == 0 || k == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Kernel, optional bias and geometry of one convolution layer.
#[derive(Clone, Debug)]
pub struct ConvSpec {
    /// `(out_c, in_c, kh, kw)`.
    pub kernel: Tensor,
    pub bias: Option<Vec<f64>>,
    pub geom: ConvGeom,
}

impl ConvSpec {
    pub fn new(kernel: Tensor, bias: Option<Vec<f64>>, geom: ConvGeom) -> Self {
        ConvSpec { kernel, bias, geom }
    }
}

/// Pure-function convolution of `input` by `spec`.
pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv2d_forward(input, &spec.kernel, spec.bias.as_deref(), spec.geom)
}

pub(crate) fn conv_output_shape(x: Shape, w: Shape, geom: ConvGeom) -> Result<Shape> {
    if x.c != w.c {
        return Err(shape_err("conv2d", format!("input has {} channels but kernel {w} expects in_c = {}", x.c, w.c)));
    }
    let oh = geom.out_len(x.h, w.h);
    let ow = geom.out_len(x.w, w.w);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape::new(x.n, w.n, oh, ow)),
        _ => Err(shape_err(
            "conv2d",
            format!("input {x} too small for kernel {}x{} with stride {}, padding {}, dilation {}", w.h, w.w, geom.stride, geom.padding, geom.dilation),
        )),
    }
}

fn is_pointwise(w: Shape, geom: ConvGeom) -> bool {
    w.h == 1 && w.w == 1 && geom.stride == 1 && geom.padding == 0
}

/// Unroll one sample into a `(c*kh*kw) x (oh*ow)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], xs: Shape, kh: usize, kw: usize, geom: ConvGeom, oh: usize, ow: usize, col: &mut [f64]) {
    let l = oh * ow;
    let pad = geom.padding as isize;
    for c in 0..xs.c {
        let plane = &x[c * xs.h * xs.w..(c + 1) * xs.h * xs.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut col[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ki * geom.dilation) as isize - pad;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= xs.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kj * geom.dilation) as isize - pad;
                        *d = if ix < 0 || ix >= xs.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto one sample.
#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], xs: Shape, kh: usize, kw: usize, geom: ConvGeom, oh: usize, ow: usize, x: &mut [f64]) {
    let l = oh * ow;
    let pad = geom.padding as isize;
    for c in 0..xs.c {
        let plane = &mut x[c * xs.h * xs.w..(c + 1) * xs.h * xs.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &col[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ki * geom.dilation) as isize - pad;
                    if iy < 0 || iy >= xs.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                    for ox in 0..ow {
                        let ix = (ox * geom.stride + kj * geom.dilation) as isize - pad;
                        if ix >= 0 && ix < xs.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Column matrix for sample `n`, borrowed directly for pointwise convolutions.
fn sample_cols<'a>(x: &'a Tensor, n: usize, w: Shape, geom: ConvGeom, oh: usize, ow: usize, buf: &'a mut Vec<f64>) -> &'a [f64] {
    if is_pointwise(w, geom) {
        return x.sample(n);
    }
    let k = w.c * w.h * w.w;
    buf.resize(k * oh * ow, 0.0);
    im2col(x.sample(n), x.shape(), w.h, w.w, geom, oh, ow, buf);
    buf
}

pub(crate) fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&[f64]>, geom: ConvGeom) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_output_shape(xs, ws, geom)?;
    if let Some(b) = bias {
        if b.len() != ws.n {
            return Err(shape_err("conv2d", format!("bias has {} entries for {} output channels", b.len(), ws.n)));
        }
    }
    let k = ws.c * ws.h * ws.w;
    let l = os.h * os.w;
    let mut out = Tensor::zeros(os);
    par::for_each_chunk(out.data_mut(), os.sample(), |n, dst| {
        let mut buf = Vec::new();
        let col = sample_cols(x, n, ws, geom, os.h, os.w, &mut buf);
        if let Some(b) = bias {
            for (co, row) in dst.chunks_mut(l).enumerate() {
                row.fill(b[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(ws.n, k, l, w.data(), Layout::row(k), col, Layout::row(l), dst, l, beta);
    });
    Ok(out)
}

/// Input gradient of a convolution: the transposed convolution of `gout`.
pub(crate) fn conv2d_input_grad(gout: &Tensor, w: &Tensor, geom: ConvGeom, xs: Shape) -> Tensor {
    let ws = w.shape();
    let os = gout.shape();
    let k = ws.c * ws.h * ws.w;
    let l = os.h * os.w;
    let pointwise = is_pointwise(ws, geom);
    let mut gx = Tensor::zeros(xs);
    par::for_each_chunk(gx.data_mut(), xs.sample(), |n, dst| {
        let g = gout.sample(n);
        if pointwise {
            // gx = W^T g
            gemm(k, ws.n, l, w.data(), Layout::col(k), g, Layout::row(l), dst, l, 0.0);
        } else {
            let mut gcol = vec![0.0; k * l];
            gemm(k, ws.n, l, w.data(), Layout::col(k), g, Layout::row(l), &mut gcol, l, 0.0);
            col2im(&gcol, xs, ws.h, ws.w, geom, os.h, os.w, dst);
        }
    });
    gx
}

/// Kernel gradient `sum_n gout_n * col(x_n)^T`, accumulated in batch order.
pub(crate) fn conv2d_weight_grad(x: &Tensor, gout: &Tensor, ws: Shape, geom: ConvGeom) -> Tensor {
    let os = gout.shape();
    let k = ws.c * ws.h * ws.w;
    let l = os.h * os.w;
    let partials: Vec<Vec<f64>> = par::map_range(os.n, |n| {
        let mut buf = Vec::new();
        let col = sample_cols(x, n, ws, geom, os.h, os.w, &mut buf);
        let mut gw = vec![0.0; ws.n * k];
        gemm(ws.n, l, k, gout.sample(n), Layout::row(l), col, Layout::col(l), &mut gw, k, 0.0);
        gw
    });
    let mut gw = Tensor::zeros(ws);
    for p in &partials {
        for (a, b) in gw.data_mut().iter_mut().zip(p) {
            *a += b;
        }
    }
    gw
}

pub(crate) fn conv2d_bias_grad(gout: &Tensor) -> Vec<f64> {
    let os = gout.shape();
    let mut gb = vec![0.0; os.c];
    for n in 0..os.n {
        for (c, g) in gb.iter_mut().enumerate() {
            *g += gout.plane(n, c).iter().sum::<f64>();
        }
    }
    gb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_matches_formula() {
        let g = ConvGeom::new(2, 1, 1);
        assert_eq!(g.out_len(16, 3), Some(8));
        assert_eq!(ConvGeom::valid().out_len(2, 3), None);
        assert_eq!(ConvGeom::new(1, 0, 2).out_len(5, 3), Some(1));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut k = Tensor::zeros(Shape::new(1, 1, 3, 3));
        k.set(0, 0, 1, 1, 1.0);
        let y = conv2d(&x, &ConvSpec::new(k, None, ConvGeom::same(3))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let y = conv2d(&x, &ConvSpec::new(k, None, ConvGeom::valid())).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn channel_mismatch_names_dimensions() {
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let k = Tensor::zeros(Shape::new(2, 4, 3, 3));
        let err = conv2d(&x, &ConvSpec::new(k, None, ConvGeom::same(3))).unwrap_err().to_string();
        assert!(err.contains("3 channels") && err.contains("in_c = 4"), "{err}");
    }

    #[test]
    fn too_small_input_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let k = Tensor::zeros(Shape::new(1, 1, 3, 3));
        assert!(conv2d(&x, &ConvSpec::new(k, None, ConvGeom::valid())).is_err());
    }
}
