//! Isogeometric Poisson solver on truncated hierarchical B-spline spaces with
//! guaranteed functional error bounds (majorant and minorant), a residual
//! indicator for comparison, and an adaptive refinement loop.

pub mod adaptivity;
pub mod assembly;
pub mod error;
pub mod estimates;
pub mod geometry;
pub mod harness;
pub mod hierarchy;
pub mod quadrature;
pub mod sparse;
pub mod splines;
mod tensor;

pub use error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;
