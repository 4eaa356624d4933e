//! Model-based planning regularized by learned energy estimates.
//!
//! A neural dynamics model is learned from environment transitions together
//! with a deep energy estimator of those transitions. Planning maximizes the
//! imagined reward minus a weighted energy of each imagined transition, so
//! the optimizer is discouraged from trajectories the models have never seen.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod density;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod io;
pub mod nn;
pub mod planner;
pub mod normalize;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
