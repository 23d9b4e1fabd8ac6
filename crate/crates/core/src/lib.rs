// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod controller;
pub mod error;
pub mod harness;
pub mod lp;
pub mod mdp;
pub mod oracle;
pub mod projection;
pub mod scenario;

pub use error::{Error, Result};
