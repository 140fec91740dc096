//! Forward definitions of every differentiable op, as `Tape` methods.

pub mod activation;
pub mod arith;
pub mod conv;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shape;
