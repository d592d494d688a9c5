//! Adversarially robust learning of multi-index models with two-layer networks.

// `!(x > 0.0)` style checks are used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod approx;
pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod poly;
pub mod quad;
pub mod rng;
pub mod robust_train;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
