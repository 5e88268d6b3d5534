//! Frozen-pose extrinsics calibration.
//!
//! Both arms hold still at a handful of viewpoints. Every tick takes the next
//! viewpoint round-robin, measures the true sight line exactly and runs one
//! adaptation step with zero task errors and only the box rows.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use nalgebra::DVector;

use crate::adaptive::{
    adapt_tick, assemble_adaptation_qp, estimated_measurement, measurement_error, projector_rows, AdaptationGains,
    AdaptationInput, TaskParamJacobians,
};
use crate::camera::to_optical_frame;
use crate::constraints::{ConstraintSet, TrackedFrame};
use crate::dq::Quaternion;
use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, layout, JointVector, KinematicState, ParamVector, SerialChainModel, SystemParams, PARAMS,
};
use crate::qp::{self, QpOptions, QpStatus};
use crate::task::{TaskErrors, TaskTargets};

use super::config::{circle_trajectory, ScenarioConfig};
use super::init::{inverse_kinematics, look_at, params_of, PoseTarget};
use super::sim::{stack, ParamBounds};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub viewpoints: usize,
    /// Injected rotation about the camera x axis, rad.
    pub rotation_error: f64,
    /// Injected effector translation error magnitude, m.
    pub translation_error: f64,
    pub ticks: usize,
    /// Azimuth spread of the camera around the tip, rad.
    pub azimuth_spread: f64,
    /// Viewing distances span `d_image · (1 ± distance_spread / 2)`.
    pub distance_spread: f64,
    pub estimate: EstimatedSet,
}

/// Which parameters the calibration adapts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatedSet {
    All,
    /// Camera effector translation and rotation only.
    CameraExtrinsics,
}

impl EstimatedSet {
    fn indices(self) -> Option<Vec<usize>> {
        match self {
            Self::All => None,
            Self::CameraExtrinsics => Some((PARAMS + layout::EFFECTOR_TRANSLATION..2 * PARAMS).collect()),
        }
    }
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            viewpoints: 5,
            rotation_error: 2f64.to_radians(),
            translation_error: 2e-3,
            ticks: 2000,
            azimuth_spread: 40f64.to_radians(),
            distance_spread: 0.5,
            estimate: EstimatedSet::All,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    /// `‖ỹ‖` of the viewpoint used at each tick, before the update.
    pub residuals: Vec<f64>,
    /// `‖ỹ‖` of every viewpoint at the final estimate.
    pub final_residuals: Vec<f64>,
    /// First tick after which every later residual stays below 1e-3.
    pub converged_at: Option<usize>,
    /// Angle between true and estimated camera orientations, averaged over viewpoints, deg.
    pub initial_rotation_error_deg: f64,
    pub final_rotation_error_deg: f64,
    pub max_projector_residual: f64,
    pub fallbacks: usize,
}

impl CalibrationReport {
    pub fn max_final_residual(&self) -> f64 {
        self.final_residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Residual threshold used for `converged_at`.
pub const CALIBRATION_TOL: f64 = 1e-3;

struct Viewpoint {
    q: [JointVector; 2],
    y: Quaternion,
}

fn true_plant(nominal: &ParamVector, cal: &CalibrationConfig) -> ParamVector {
    let mut a = *nominal;
    a[layout::EFFECTOR_ROTATION] += cal.rotation_error;
    let dir = Vector3::new(1.0, 1.0, 1.0).normalize() * cal.translation_error;
    for k in 0..3 {
        a[layout::EFFECTOR_TRANSLATION + k] += dir[k];
    }
    a
}

fn measure(tool: &KinematicState, camera: &KinematicState) -> Result<Quaternion> {
    to_optical_frame(&camera.rotation, &(tool.translation - camera.translation).normalized())
}

fn rotation_gap(a: &Quaternion, b: &Quaternion) -> f64 {
    let e = a.conj() * *b;
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(e.w, e.x, e.y, e.z)).angle()
}

/// Runs the frozen-pose calibration with the scenario's models, gains and
/// intrinsics. Only the camera effector pose of the plant is perturbed.
pub fn run_calibration(cfg: &ScenarioConfig, cal: &CalibrationConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    if cal.viewpoints == 0 || cal.ticks == 0 {
        return Err(Error::Config(
            "calibration needs at least one viewpoint and one tick".into(),
        ));
    }
    let models = [cfg.robots.tool.model.clone(), cfg.robots.camera.model.clone()];
    let nominal = [models[0].parameters(), models[1].parameters()];
    let a_true = [nominal[0], true_plant(&nominal[1], cal)];
    let a_nominal = stack(&nominal[0], &nominal[1]);
    let bounds = ParamBounds::new(cfg, &a_nominal);

    // Viewpoints: tip on the circle, camera at d_image on a swept azimuth.
    let mut q = [
        JointVector::from(cfg.robots.tool.home),
        JointVector::from(cfg.robots.camera.home),
    ];
    let home_cam = forward_kinematics(&models[1], &q[1], &nominal[1])?.translation.imag();
    let mut views = Vec::with_capacity(cal.viewpoints);
    for k in 0..cal.viewpoints {
        let n = cal.viewpoints;
        let spread = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
        // Distance runs through the viewpoints in a different order than azimuth.
        let (s, r) = (spread(k), spread((2 * k) % n));
        let (t1d, r1d) = circle_trajectory(k as f64 * cfg.trajectory.period / n as f64, &cfg.trajectory);
        q[0] = inverse_kinematics(
            &models[0],
            &nominal[0],
            &q[0],
            &PoseTarget {
                rotation: r1d,
                translation: t1d,
            },
        )?;
        let tip = forward_kinematics(&models[0], &q[0], &nominal[0])?.translation.imag();
        let away =
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), s * cal.azimuth_spread) * (home_cam - tip).normalize();
        let position = Quaternion::from_vec3(&(tip + away * cfg.camera.d_image * (1.0 + r * cal.distance_spread)));
        q[1] = inverse_kinematics(
            &models[1],
            &nominal[1],
            &q[1],
            &PoseTarget {
                rotation: look_at(&-away),
                translation: position,
            },
        )?;
        let y = measure(
            &forward_kinematics(&models[0], &q[0], &a_true[0])?,
            &forward_kinematics(&models[1], &q[1], &a_true[1])?,
        )?;
        views.push(Viewpoint { q, y });
    }

    let ac = &cfg.gains.adaptation;
    let gains = AdaptationGains::uniform(ac.eta_a, ac.damping);
    let dt = cfg.trajectory.dt();
    let mut a_hat = a_nominal;
    let mut residuals = Vec::with_capacity(cal.ticks);
    let mut max_projector = 0.0f64;
    let mut fallbacks = 0;
    let mut warm = Vec::new();
    let subset = cal.estimate.indices();
    for tick in 0..cal.ticks {
        let view = &views[tick % views.len()];
        let (tool, camera) = estimated_states(&models, &view.q, &a_hat)?;
        let tool_frame = TrackedFrame::param_space(&tool, 0);
        let optical = TrackedFrame::param_space(&camera, 1);
        let tip = tool_frame.point();
        let targets = TaskTargets {
            r1d: tool.rotation,
            t1d: tool.translation,
            t2d: camera.translation,
        };
        let errors = TaskErrors {
            t1: Quaternion::ZERO,
            r1: Quaternion::ZERO,
            t2: Quaternion::ZERO,
        };
        let mut rows = ConstraintSet::default();
        rows.extend(bounds.rows(&a_hat, ac.box_eta));
        let jac = TaskParamJacobians::new(&tool_frame, &optical, &targets);
        let input = AdaptationInput {
            tip: &tip,
            camera: &optical,
            measurement: &view.y,
            errors: &errors,
            task_jacobians: &jac,
            task_gains: &cfg.gains.task,
            constraints: &rows,
        };
        let (u, status, active) = match &subset {
            None => {
                let out = adapt_tick(&input, &gains, Some(&warm))?;
                residuals.push(out.measurement_error.norm());
                (out.u, out.status, out.solution.active_set)
            }
            Some(keep) => {
                let y_hat = estimated_measurement(&tip, &optical)?;
                residuals.push(measurement_error(&y_hat, &view.y).norm());
                let p = assemble_adaptation_qp(&input, &gains)?.restrict(keep);
                let sol = qp::solve(
                    &p,
                    &QpOptions {
                        warm_start: Some(warm.clone()),
                        ..QpOptions::default()
                    },
                )?;
                let mut u = SystemParams::zeros();
                if sol.is_optimal() {
                    for (k, &i) in keep.iter().enumerate() {
                        u[i] = sol.u[k];
                    }
                }
                (u, sol.status, sol.active_set)
            }
        };
        if status == QpStatus::Optimal {
            warm = active;
        } else {
            fallbacks += 1;
        }
        let du = DVector::from_column_slice(u.as_slice());
        max_projector = max_projector.max((projector_rows(&tip, &optical)? * du).norm());
        a_hat += u * dt;
    }

    let mut final_residuals = Vec::with_capacity(views.len());
    let (mut rot0, mut rot1) = (0.0, 0.0);
    for view in &views {
        let (tool, camera) = estimated_states(&models, &view.q, &a_hat)?;
        let p = TrackedFrame::param_space(&tool, 0).point();
        let y_hat = estimated_measurement(&p, &TrackedFrame::param_space(&camera, 1))?;
        final_residuals.push((y_hat - view.y).norm());
        let truth = forward_kinematics(&models[1], &view.q[1], &a_true[1])?.rotation;
        let start = forward_kinematics(&models[1], &view.q[1], &nominal[1])?.rotation;
        rot0 += rotation_gap(&start, &truth);
        rot1 += rotation_gap(&camera.rotation, &truth);
    }
    let n = views.len() as f64;
    let converged_at = residuals
        .iter()
        .rposition(|r| *r >= CALIBRATION_TOL)
        .map_or(Some(0), |i| (i + 1 < residuals.len()).then_some(i + 1));
    Ok(CalibrationReport {
        residuals,
        final_residuals,
        converged_at,
        initial_rotation_error_deg: (rot0 / n).to_degrees(),
        final_rotation_error_deg: (rot1 / n).to_degrees(),
        max_projector_residual: max_projector,
        fallbacks,
    })
}

fn estimated_states(
    models: &[SerialChainModel; 2],
    q: &[JointVector; 2],
    a_hat: &SystemParams,
) -> Result<(KinematicState, KinematicState)> {
    Ok((
        forward_kinematics(&models[0], &q[0], &params_of(a_hat, 0))?,
        forward_kinematics(&models[1], &q[1], &params_of(a_hat, 1))?,
    ))
}
