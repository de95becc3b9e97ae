//! Learn-as-you-go adaptive trial engine.
//!
//! Fits outcome models on staged multi-center data, recommends the
//! cheapest intervention package meeting an outcome goal and a power goal
//! for the final test, runs the final analysis, and estimates operating
//! characteristics by Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cost;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod power;
pub mod sim;
pub mod trial;

pub use error::{LagoError, Result};
