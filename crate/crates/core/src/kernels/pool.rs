use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Windowed maximum without padding. Returns the pooled tensor and, per output
/// element, the flat input index of its argmax (first in scan order on ties).
pub fn max_pool(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let is = input.shape();
    if k == 0 || stride == 0 {
        return Err(shape_err("max_pool", "kernel and stride must be >= 1"));
    }
    if k > is.h || k > is.w {
        return Err(shape_err("max_pool", format!("window {k}x{k} larger than input {is}")));
    }
    let oh = (is.h - k) / stride + 1;
    let ow = (is.w - k) / stride + 1;
    let os = Shape::new(is.n, is.c, oh, ow);
    let mut out = Tensor::zeros(os);
    let mut arg = vec![0usize; os.numel()];
    let data = input.data();
    for nc in 0..is.n * is.c {
        let base = nc * is.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut bi = base + oy * stride * is.w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * is.w + ox * stride + kx;
                        if data[i] > best {
                            best = data[i];
                            bi = i;
                        }
                    }
                }
                let o = nc * os.plane() + oy * ow + ox;
                out.data_mut()[o] = best;
                arg[o] = bi;
            }
        }
    }
    Ok((out, arg))
}

pub(crate) fn max_pool_backward(is: Shape, arg: &[usize], gout: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(is);
    for (o, &i) in arg.iter().enumerate() {
        g.data_mut()[i] += gout.data()[o];
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_max() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn ties_pick_first() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 0.5);
        let (y, arg) = max_pool(&x, 3, 1).unwrap();
        assert_eq!(y.data(), &[0.5]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::full(Shape::new(2, 3, 9, 9), 1.25);
        let (y, _) = max_pool(&x, 3, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn oversized_window_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(max_pool(&x, 3, 1).is_err());
    }

    #[test]
    fn gradient_routes_to_argmax() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 4), vec![1.0, 5.0, 0.0, 2.0, 3.0, 4.0, 7.0, 6.0]).unwrap();
        let (y, arg) = max_pool(&x, 2, 2).unwrap();
        let g = max_pool_backward(x.shape(), &arg, &Tensor::full(y.shape(), 1.0));
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
