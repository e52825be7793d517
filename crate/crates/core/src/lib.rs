// Negated comparisons are deliberate: they reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod control;
pub mod error;
pub mod features;
pub mod io;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Result, RsmError};
