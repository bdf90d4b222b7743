// negated comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod constraints;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod kernels;
pub mod mglh;
pub mod moments;

pub use error::{Error, ErrorKind, Result};
