//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every forward op as a node; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients into the leaves. Activations are
//! NHWC, convolution kernels HWIO, and convolution is cross-correlation.
//!
//! ```
//! use lssf_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
mod grad;
pub mod gradcheck;
pub mod kernels;
pub mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::norm::RunningStats;
pub use tape::{Mode, Padding, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// Batch-norm defaults.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
/// Layer-norm default.
pub const LN_EPS: f64 = 1e-6;
