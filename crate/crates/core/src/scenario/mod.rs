//! Closed-loop experiment harness: a tool arm follows a circle while a
//! camera arm keeps the tool tip in view, with the controller and estimator
//! working from an estimated model of a perturbed plant.

mod calibration;
mod config;
mod init;
mod sim;
mod trace;

pub use calibration::*;
pub use config::*;
pub use init::{from_rotation_matrix, inverse_kinematics, look_at, perturb, rotation_between, PoseTarget};
pub use sim::*;
pub use trace::*;
