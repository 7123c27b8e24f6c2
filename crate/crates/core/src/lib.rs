#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bounds;
pub mod error;
pub mod kernel;
pub mod par;
pub mod perturbation;
pub mod quadrature;
pub mod sampling;
pub mod series;
pub mod spacetime;
pub mod special;

pub use error::{Error, Result};
