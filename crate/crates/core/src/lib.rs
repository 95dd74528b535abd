//! Mean curvature flow on uniform grids by alternating a diffusion step with
//! exact inf/sup-convolution redistancing.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cone;
pub mod analysis;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod redistance;
pub mod scheme;

pub use error::{Error, Result, Sign};
pub use grid::{GridGeometry, LipschitzOptions, LipschitzReport, PhaseMask, ScalarField};
