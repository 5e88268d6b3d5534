//! Online kinematic-parameter adaptation from single-pixel line measurements.
//!
//! The camera sees the tool tip along a ray. The estimated ray follows from
//! the estimated kinematic parameters `â`; the difference between the two
//! directions, expressed in the optical frame, drives a QP over `â̇`.
//! Equality rows keep updates from moving the estimated tool tip or rolling
//! the camera about the sight line, since a single pixel carries no
//! information about either.

use nalgebra::{DMatrix, DVector, Matrix4};

use crate::constraints::{to_dmatrix, ConstraintKind, ConstraintRow, ConstraintSet, TrackedFrame, TrackedPoint};
use crate::dq::{conjugation_matrix, Quaternion};
use crate::error::{Error, Result};
use crate::kinematics::{SystemParams, SYSTEM_PARAMS};
use crate::qp::{self, QpOptions, QpProblem, QpSolution, QpStatus};
use crate::task::{rotation_error_jacobian, TaskErrors, TaskGains, TaskTargets};

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationGains {
    /// Proportional gain η_a, 1/s.
    pub eta_a: f64,
    /// Diagonal of the damping matrix Λ_â.
    pub damping: SystemParams,
}

impl AdaptationGains {
    pub fn uniform(eta_a: f64, damping: f64) -> Self {
        Self {
            eta_a,
            damping: SystemParams::repeat(damping),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_a > 0.0) {
            return Err(Error::Config(format!("eta_a must be positive, got {}", self.eta_a)));
        }
        if !self.damping.iter().all(|d| *d > 0.0) {
            return Err(Error::NotStrictlyConvex(
                "adaptation damping must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// `ỹ = ŷ − y`: pure, norm in `[0, 2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementError {
    pub y_tilde: Quaternion,
}

impl MeasurementError {
    pub fn norm(&self) -> f64 {
        self.y_tilde.norm()
    }
}

pub fn measurement_error(y_hat: &Quaternion, y: &Quaternion) -> MeasurementError {
    let mut y_tilde = *y_hat - *y;
    y_tilde.w = 0.0;
    MeasurementError { y_tilde }
}

/// Camera-to-tip vector `h = t̂₁ − t̂₂`, rejected when shorter than [`crate::camera::D_MIN`].
fn sight_vector(tip: &TrackedPoint, camera: &TrackedFrame) -> Result<Quaternion> {
    let h = tip.position - camera.translation;
    if h.norm() <= crate::camera::D_MIN {
        return Err(Error::Degenerate(format!(
            "tool tip {:.3e} m from the optical center",
            h.norm()
        )));
    }
    Ok(h)
}

/// Estimated measurement `ŷ = Ad(r̂₂*) l̂` with `l̂ = h/‖h‖`.
pub fn estimated_measurement(tip: &TrackedPoint, camera: &TrackedFrame) -> Result<Quaternion> {
    let h = sight_vector(tip, camera)?;
    let l = h * (1.0 / h.norm());
    let mut y = camera.rotation.conj() * l * camera.rotation;
    y.w = 0.0;
    Ok(y)
}

/// `J_l̂ = ‖h‖⁻¹ J_h + A₁ J_h` with `A₁ = ½‖h‖⁻³ H⁺(h)[H⁺(h) + H⁻(h)]`
/// and `J_h = J_t̂₁ − J_t̂₂`.
pub fn line_direction_param_jacobian(tip: &TrackedPoint, camera: &TrackedFrame) -> Result<DMatrix<f64>> {
    let h = sight_vector(tip, camera)?;
    let n = h.norm();
    let jh = &tip.jacobian - &camera.jt;
    let hp = h.hamilton_plus();
    let a1: Matrix4<f64> = hp * (hp + h.hamilton_minus()) * (0.5 / (n * n * n));
    Ok(&jh / n + to_dmatrix(&a1) * &jh)
}

/// `J_ŷ = B₁ + B₂ + B₃` with
/// `B₁ = H⁻(l̂ r̂₂) C₄ J_r̂₂`, `B₂ = H⁻(r̂₂) H⁺(r̂₂*) J_l̂`, `B₃ = H⁺(r̂₂* l̂) J_r̂₂`.
pub fn adaptation_jacobian(tip: &TrackedPoint, camera: &TrackedFrame) -> Result<DMatrix<f64>> {
    let h = sight_vector(tip, camera)?;
    let l = h * (1.0 / h.norm());
    let r = camera.rotation;
    let jl = line_direction_param_jacobian(tip, camera)?;
    let b1 = to_dmatrix(&((l * r).hamilton_minus() * conjugation_matrix())) * &camera.jr;
    let b2 = to_dmatrix(&(r.hamilton_minus() * r.conj().hamilton_plus())) * jl;
    let b3 = to_dmatrix(&(r.conj() * l).hamilton_plus()) * &camera.jr;
    Ok(b1 + b2 + b3)
}

/// `N_â` (5 rows): the tip translation Jacobian, then
/// `2 vec₄(l̂)ᵀ H⁻(r̂₂*) J_r̂₂` (camera angular velocity along the sight line).
pub fn projector_rows(tip: &TrackedPoint, camera: &TrackedFrame) -> Result<DMatrix<f64>> {
    let h = sight_vector(tip, camera)?;
    let l = h * (1.0 / h.norm());
    let n = tip.jacobian.ncols();
    let mut out = DMatrix::zeros(5, n);
    out.rows_mut(0, 4).copy_from(&tip.jacobian);
    let lv = DVector::from_column_slice(l.vec4().as_slice());
    let roll = (to_dmatrix(&camera.rotation.conj().hamilton_minus()) * &camera.jr).tr_mul(&lv) * 2.0;
    out.set_row(4, &roll.transpose());
    Ok(out)
}

/// Parameter Jacobians of the task errors: `J_t̂₁,â`, `J_r̃₁,â`, `J_t̂₂,â`.
#[derive(Clone, Debug)]
pub struct TaskParamJacobians {
    pub t1: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub t2: DMatrix<f64>,
}

impl TaskParamJacobians {
    /// `tool` and `camera` are effector frames in the stacked parameter space.
    pub fn new(tool: &TrackedFrame, camera: &TrackedFrame, targets: &TaskTargets) -> Self {
        Self {
            t1: tool.jt.clone(),
            r1: rotation_error_jacobian(&targets.r1d, &tool.jr),
            t2: camera.jt.clone(),
        }
    }
}

/// `x̃ᵀ J_x,â` as an inequality row with bound 0.
pub fn lyapunov_row(errors: &TaskErrors, jac: &TaskParamJacobians, gains: &TaskGains) -> ConstraintRow {
    let (a, b) = (gains.alpha, gains.beta);
    let v = |q: &Quaternion| DVector::from_column_slice(q.vec4().as_slice());
    let coefficients = jac.t1.tr_mul(&v(&errors.t1)) * (b * a)
        + jac.r1.tr_mul(&v(&errors.r1)) * (b * (1.0 - a))
        + jac.t2.tr_mul(&v(&errors.t2)) * (1.0 - b);
    ConstraintRow {
        coefficients,
        bound: 0.0,
        kind: ConstraintKind::Lyapunov,
    }
}

/// Everything the adaptation QP needs for one tick.
pub struct AdaptationInput<'a> {
    /// Tool tip in the stacked parameter space.
    pub tip: &'a TrackedPoint,
    /// Optical frame in the stacked parameter space.
    pub camera: &'a TrackedFrame,
    pub measurement: &'a Quaternion,
    pub errors: &'a TaskErrors,
    pub task_jacobians: &'a TaskParamJacobians,
    pub task_gains: &'a TaskGains,
    /// Box and parameter-space collision/FoV rows.
    pub constraints: &'a ConstraintSet,
}

pub fn assemble_adaptation_qp(input: &AdaptationInput, gains: &AdaptationGains) -> Result<QpProblem> {
    gains.validate()?;
    let y_hat = estimated_measurement(input.tip, input.camera)?;
    let err = measurement_error(&y_hat, input.measurement);
    let j = adaptation_jacobian(input.tip, input.camera)?;
    let e = DVector::from_column_slice(err.y_tilde.vec4().as_slice()) * gains.eta_a;

    let mut h = j.tr_mul(&j);
    for k in 0..SYSTEM_PARAMS {
        h[(k, k)] += gains.damping[k] * gains.damping[k];
    }
    let f = j.tr_mul(&e);

    let mut rows = input.constraints.clone();
    rows.push(lyapunov_row(input.errors, input.task_jacobians, input.task_gains));
    let (a, b) = rows.inequality_matrices(SYSTEM_PARAMS)?;
    let c = projector_rows(input.tip, input.camera)?;
    let d = DVector::zeros(c.nrows());
    Ok(QpProblem::new(h, f).with_inequalities(a, b).with_equalities(c, d))
}

#[derive(Clone, Debug)]
pub struct AdaptationOutput {
    pub u: SystemParams,
    pub status: QpStatus,
    pub fallback: bool,
    pub measurement_error: MeasurementError,
    pub solution: QpSolution,
    pub problem: QpProblem,
}

/// Solves one adaptation tick. Non-optimal solves fall back to `u_â = 0`.
pub fn adapt_tick(
    input: &AdaptationInput,
    gains: &AdaptationGains,
    warm_start: Option<&[usize]>,
) -> Result<AdaptationOutput> {
    let problem = assemble_adaptation_qp(input, gains)?;
    let y_hat = estimated_measurement(input.tip, input.camera)?;
    let opts = QpOptions {
        warm_start: warm_start.map(<[usize]>::to_vec),
        ..QpOptions::default()
    };
    let solution = qp::solve(&problem, &opts)?;
    let fallback = !solution.is_optimal();
    if fallback {
        log::warn!("adaptation QP returned {:?}; holding parameters", solution.status);
    }
    let u = if fallback {
        SystemParams::zeros()
    } else {
        SystemParams::from_column_slice(solution.u.as_slice())
    };
    Ok(AdaptationOutput {
        u,
        status: solution.status,
        fallback,
        measurement_error: measurement_error(&y_hat, input.measurement),
        solution,
        problem,
    })
}
