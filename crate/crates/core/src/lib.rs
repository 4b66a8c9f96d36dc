//! Numerical tools for the top Lyapunov exponent of products of the random
//! matrices `[[1, eps], [eps Z, Z]]` as `eps -> 0`.

// negated comparisons are used on purpose: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alpha_delta;
pub mod chain_sim;
pub mod dh_asymptotics;
pub mod dist_models;
pub mod error;
pub mod quad;
pub mod transfer_grid;

pub use error::{Error, Result};
