use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Sub-pixel rearrangement `(n, c*r^2, h, w) -> (n, c, h*r, w*r)`:
/// `out(n, k, y, x) = in(n, k*r^2 + (y mod r)*r + (x mod r), y / r, x / r)`.
pub fn pixel_shuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let is = input.shape();
    if r == 0 || !is.c.is_multiple_of(r * r) {
        return Err(shape_err("pixel_shuffle", format!("{} channels not divisible by r^2 = {}", is.c, r * r)));
    }
    let os = Shape::new(is.n, is.c / (r * r), is.h * r, is.w * r);
    Ok(Tensor::from_fn(os, |n, k, y, x| input.at(n, k * r * r + (y % r) * r + (x % r), y / r, x / r)))
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let is = input.shape();
    if r == 0 || !is.h.is_multiple_of(r) || !is.w.is_multiple_of(r) {
        return Err(shape_err("pixel_unshuffle", format!("{is} not divisible by r = {r}")));
    }
    let os = Shape::new(is.n, is.c * r * r, is.h / r, is.w / r);
    Ok(Tensor::from_fn(os, |n, ch, y, x| {
        let k = ch / (r * r);
        let sub = ch % (r * r);
        input.at(n, k, y * r + sub / r, x * r + sub % r)
    }))
}
