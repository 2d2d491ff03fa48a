//! Data, metrics, persistence, training and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod io;
pub mod metrics;
pub mod train;
