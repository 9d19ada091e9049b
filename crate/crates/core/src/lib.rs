//! Recursive-utility portfolio problems under market perturbations.

// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod bounds;
pub mod bsde;
pub mod cli;
pub mod config;
pub mod error;
pub mod market;
pub mod paths;
pub mod preferences;
pub mod regression;
pub mod stability;
pub mod svg;

pub use error::{Error, Result};
