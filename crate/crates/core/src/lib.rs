//! Gaussian-process learning of interaction kernels in interacting-particle
//! systems.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accel;
pub mod analysis;
pub mod covfunc;
pub mod error;
pub mod gp;
pub mod krr;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
