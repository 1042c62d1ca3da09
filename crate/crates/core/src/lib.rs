// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod kernel;
pub mod partition;
pub mod registration;
pub mod solver;

pub use error::{Error, Result};
