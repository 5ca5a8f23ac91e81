//! Numeric kernels behind the differentiable operations.

pub mod conv;
pub mod loss;
pub mod norm;
pub mod upsample;
