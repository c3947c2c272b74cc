//! Tabular laboratory for history-dependent off-policy multistep operators.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod operator;
pub mod traces;

pub use error::{Error, Result};
