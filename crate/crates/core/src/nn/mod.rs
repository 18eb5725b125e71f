//! Minimal neural-network substrate: layers with hand-written backprop.
//!
//! All tensors are `f64` in NCHW / (N, F) layouts. Parallelism lives inside
//! the ops (blocked GEMM, per-image lowering) with fixed partitions, so every
//! forward and backward pass is bit-deterministic regardless of thread count.

pub mod activations;
pub mod conv;
pub mod dropout;
pub mod gemm;
pub mod init;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod upsample;

pub use activations::{Gelu, Sigmoid};
pub use conv::Conv2d;
pub use dropout::Dropout;
pub use linear::Linear;
pub use norm::{BatchNorm1d, BatchNorm2d};
pub use optim::{scale_grads, zero_grads, AdamW, ParamRef};
pub use upsample::Upsample2x;
