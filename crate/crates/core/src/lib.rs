#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod train;

pub use dualbind_autodiff::Precision;
pub use error::{Error, Result};
