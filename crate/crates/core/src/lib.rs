// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autonet;
pub mod config;
pub mod data;
pub mod dirichlet;
pub mod error;
pub mod eval;
pub mod losses;
pub mod numeric;
pub mod render;
pub mod trainer;

pub use error::{Error, Result};
