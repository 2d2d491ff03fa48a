//! Numerical kernels on [`Tensor`](crate::Tensor) values.
//!
//! Forward functions here are public and pure; the matching backward passes
//! are crate-private and wired into the tape in [`crate::autograd`].

pub mod conv;
pub mod dynamic;
pub(crate) mod gemm;
pub mod pool;
pub mod sample;
pub mod shuffle;
pub mod unfold;

pub use conv::{conv2d, ConvGeom, ConvSpec};
pub use dynamic::{dynamic_filter_apply, standardize_groups, FilterAffine};
pub use pool::max_pool;
pub use sample::{deformable_sample, grid_sample_bilinear, resize_bilinear};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use unfold::{fold_average, unfold, PatchMatrix};
