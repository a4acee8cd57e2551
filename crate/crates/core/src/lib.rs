// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body_model;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod network;
pub mod probes;
pub mod refine;
pub mod scene;
pub mod training;

pub use error::{GraftError, Result};
