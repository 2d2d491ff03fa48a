use crate::error::{shape_err, Result};
use crate::kernels::conv::ConvGeom;
use crate::tensor::{Shape, Tensor};

/// Row-major `rows x cols` matrix of flattened patches, one patch per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Patch grid size.
    pub grid_h: usize,
    pub grid_w: usize,
    pub data: Vec<f64>,
}

impl PatchMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Extract every `k x k` window of a single-sample tensor. Each patch is
/// flattened channel-major (`c*k*k + ky*k + kx`); out-of-range taps are zero.
pub fn unfold(input: &Tensor, k: usize, stride: usize, pad: usize) -> Result<PatchMatrix> {
    let s = input.shape();
    if s.n != 1 {
        return Err(shape_err("unfold", format!("expects a single sample, got batch {}", s.n)));
    }
    let geom = ConvGeom::new(stride, pad, 1);
    let (gh, gw) = match (geom.out_len(s.h, k), geom.out_len(s.w, k)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(shape_err("unfold", format!("no {k}x{k} patch fits {s} with stride {stride}, pad {pad}"))),
    };
    let cols = s.c * k * k;
    let mut data = vec![0.0; gh * gw * cols];
    for gy in 0..gh {
        for gx in 0..gw {
            let row = &mut data[(gy * gw + gx) * cols..(gy * gw + gx + 1) * cols];
            for c in 0..s.c {
                for ky in 0..k {
                    let iy = (gy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (gx * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < s.w as isize {
                            row[(c * k + ky) * k + kx] = input.at(0, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
        }
    }
    Ok(PatchMatrix { rows: gh * gw, cols, grid_h: gh, grid_w: gw, data })
}

/// Reassemble patches onto a `shape` canvas, averaging overlapping taps.
pub fn fold_average(patches: &PatchMatrix, shape: Shape, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    if shape.n != 1 || patches.cols != shape.c * k * k {
        return Err(shape_err("fold_average", format!("patch width {} incompatible with {shape}, k = {k}", patches.cols)));
    }
    let mut sum = Tensor::zeros(shape);
    let mut count = Tensor::zeros(shape);
    for gy in 0..patches.grid_h {
        for gx in 0..patches.grid_w {
            let row = patches.row(gy * patches.grid_w + gx);
            for c in 0..shape.c {
                for ky in 0..k {
                    let iy = (gy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= shape.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (gx * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < shape.w as isize {
                            let i = sum.index(0, c, iy as usize, ix as usize);
                            sum.data_mut()[i] += row[(c * k + ky) * k + kx];
                            count.data_mut()[i] += 1.0;
                        }
                    }
                }
            }
        }
    }
    sum.zip_map(&count, "fold_average", |s, n| if n > 0.0 { s / n } else { 0.0 })
}
