//! Reference-based image super-resolution with flow-guided feature
//! alignment and dynamic-filter aggregation.

pub mod aggregation;
pub mod alignment;
pub mod autograd;
pub mod correspondence;
pub mod degrade;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod hash;
pub mod kernels;
pub mod layers;
pub mod losses;
pub mod network;
pub mod par;
pub mod params;
pub mod tensor;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
