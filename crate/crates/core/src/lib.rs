//! Adaptive constrained kinematic control for a robot-held camera.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod camera;
pub mod check;
pub mod constraints;
pub mod dq;
pub mod error;
pub mod kinematics;
pub mod qp;
pub mod scenario;
pub mod task;

pub use error::{Error, Result};
