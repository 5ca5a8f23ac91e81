//! Structured dropout for segmentation networks: regularizers, a
//! variance-shift lab, a small autodiff engine, a DeepLab-shaped toy model,
//! a data pipeline and an experiment harness.

pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod regularizers;
pub mod rng;
pub mod tensor;
pub mod varlab;

pub use error::{Error, Result};

/// Whether stochastic layers and batch statistics are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
