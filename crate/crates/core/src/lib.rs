//! Automated threshold selection for peaks-over-threshold modeling.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod error;
pub mod estimation;
pub mod gof;
pub mod gpd;
pub mod null_dist;
mod optim;
pub mod return_levels;
pub mod rng;
pub mod scalar;
pub mod sequential;
pub mod simstudy;
pub mod special;
pub mod station;

pub use error::{Error, Result};
pub use gpd::GpdParams;
pub use scalar::Scalar;

/// Double-precision GPD parameters.
pub type Gpd = GpdParams<f64>;
/// Single-precision GPD parameters.
pub type Gpd32 = GpdParams<f32>;
