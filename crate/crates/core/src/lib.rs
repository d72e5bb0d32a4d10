#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod numkernel;
pub mod pipeline;
pub mod training;
pub mod transducer;

pub use error::{Error, Result};
