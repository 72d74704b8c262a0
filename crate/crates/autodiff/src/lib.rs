//! Small dense reverse-mode automatic differentiation.
//!
//! The engine is deliberately modest: row-major tensors of rank 0..2, a
//! shared [`Tape`] recording every operation of a forward pass, and a
//! reverse sweep that accumulates gradients into the recorded nodes. No
//! broadcasting exists beyond row-wise bias addition, and execution is
//! single-threaded, which keeps every run bit-for-bit reproducible.
//!
//! Values are `f64` by default; the `f32` feature switches training-time
//! storage to single precision. Gradient checks only make sense at 64-bit.

// The kernels walk flat buffers with explicit `base + j` offset math;
// index loops keep that arithmetic visible.
#![allow(clippy::needless_range_loop)]

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

mod error;
mod ops;
mod tensor;

pub mod gradcheck;

pub use error::{Result, TensorError};
pub use ops::CeOutput;
pub use tensor::{Tape, Tensor};
