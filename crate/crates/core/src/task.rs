//! Two-robot task-space controller.
//!
//! R1 tracks a full pose target; R2 (the camera arm) is only weakly pulled
//! towards a neutral position and is otherwise driven by the constraint rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{to_dmatrix, ConstraintSet};
use crate::dq::{conjugation_matrix, Quaternion};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicState, SystemJoints, JOINTS, SYSTEM_JOINTS};
use crate::qp::{self, QpOptions, QpProblem, QpSolution, QpStatus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGains {
    /// Proportional gain η_q, 1/s.
    pub eta_q: f64,
    /// Translation vs rotation weight for R1.
    pub alpha: f64,
    /// R1 vs R2 weight.
    pub beta: f64,
    /// Joint-velocity damping λ.
    pub lambda: f64,
}

impl Default for TaskGains {
    fn default() -> Self {
        Self {
            eta_q: 3.0,
            alpha: 0.99,
            beta: 0.999,
            lambda: 0.01,
        }
    }
}

impl TaskGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_q > 0.0) {
            return Err(Error::Config(format!("eta_q must be positive, got {}", self.eta_q)));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("alpha and beta must lie in [0, 1]".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::NotStrictlyConvex(format!(
                "task damping must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskTargets {
    pub r1d: Quaternion,
    pub t1d: Quaternion,
    /// Neutral camera position.
    pub t2d: Quaternion,
}

/// `r̂* r_d − 1` or `r̂* r_d + 1`, whichever is smaller. Ties go to the minus branch.
pub fn switching_rotation_error(r_hat: &Quaternion, r_d: &Quaternion) -> Quaternion {
    let e = r_hat.conj() * *r_d;
    let minus = e - Quaternion::ONE;
    let plus = e + Quaternion::ONE;
    if minus.norm() <= plus.norm() {
        minus
    } else {
        plus
    }
}

/// Jacobian of the switching rotation error given `J_r̂` (either branch:
/// the constant ±1 does not contribute).
pub fn rotation_error_jacobian(r_d: &Quaternion, jr: &DMatrix<f64>) -> DMatrix<f64> {
    to_dmatrix(&(r_d.hamilton_minus() * conjugation_matrix())) * jr
}

/// Current tracking errors of both branches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskErrors {
    pub t1: Quaternion,
    pub r1: Quaternion,
    pub t2: Quaternion,
}

impl TaskErrors {
    pub fn new(r1: &KinematicState, r2: &KinematicState, targets: &TaskTargets) -> Self {
        Self {
            t1: r1.translation - targets.t1d,
            r1: switching_rotation_error(&r1.rotation, &targets.r1d),
            t2: r2.translation - targets.t2d,
        }
    }

    /// `β α ‖t̃₁‖² + β (1−α) ‖r̃₁‖² + (1−β) ‖t̃₂‖²`
    pub fn lyapunov(&self, gains: &TaskGains) -> f64 {
        gains.beta * gains.alpha * self.t1.norm_squared()
            + gains.beta * (1.0 - gains.alpha) * self.r1.norm_squared()
            + (1.0 - gains.beta) * self.t2.norm_squared()
    }
}

fn dyn4(m: &crate::kinematics::JointJacobian) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, JOINTS, m.as_slice())
}

/// Adds `w ‖J u + e‖²` to the cost `½ uᵀ H u + fᵀ u` (up to a factor 2 and a constant).
fn add_least_squares(
    h: &mut DMatrix<f64>,
    f: &mut DVector<f64>,
    offset: usize,
    j: &DMatrix<f64>,
    e: &Quaternion,
    w: f64,
) {
    let n = j.ncols();
    let ev = DVector::from_column_slice(e.vec4().as_slice());
    let mut hb = h.view_mut((offset, offset), (n, n));
    hb += j.tr_mul(j) * w;
    let mut fb = f.rows_mut(offset, n);
    fb += j.tr_mul(&ev) * w;
}

/// Quadratic program over the stacked joint velocities `[q̇₁; q̇₂]`.
pub fn assemble_task_qp(
    r1: &KinematicState,
    r2: &KinematicState,
    targets: &TaskTargets,
    gains: &TaskGains,
    constraints: &ConstraintSet,
) -> Result<QpProblem> {
    gains.validate()?;
    let errors = TaskErrors::new(r1, r2, targets);
    let (a, b, g) = (gains.alpha, gains.beta, gains.eta_q);
    let mut h = DMatrix::zeros(SYSTEM_JOINTS, SYSTEM_JOINTS);
    let mut f = DVector::zeros(SYSTEM_JOINTS);

    let jt1 = dyn4(&r1.jt_q);
    let jr1 = rotation_error_jacobian(&targets.r1d, &dyn4(&r1.jr_q));
    let jt2 = dyn4(&r2.jt_q);
    add_least_squares(&mut h, &mut f, 0, &jt1, &(errors.t1 * g), b * a);
    add_least_squares(&mut h, &mut f, 0, &jr1, &(errors.r1 * g), b * (1.0 - a));
    add_least_squares(&mut h, &mut f, JOINTS, &jt2, &(errors.t2 * g), 1.0 - b);
    let damping = gains.lambda * gains.lambda;
    for k in 0..JOINTS {
        h[(k, k)] += b * damping;
        h[(JOINTS + k, JOINTS + k)] += (1.0 - b) * damping;
    }
    if !(b * damping > 0.0 && (1.0 - b) * damping > 0.0) {
        return Err(Error::NotStrictlyConvex(
            "beta must lie strictly inside (0, 1) for both branches to be damped".into(),
        ));
    }

    let (am, bv) = constraints.inequality_matrices(SYSTEM_JOINTS)?;
    let mut p = QpProblem::new(h, f).with_inequalities(am, bv);
    if !constraints.equalities.is_empty() {
        let (c, d) = constraints.equality_matrices(SYSTEM_JOINTS)?;
        p = p.with_equalities(c, d);
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct ControlOutput {
    pub u: SystemJoints,
    pub status: QpStatus,
    /// Set when the QP did not return an optimal point and `u` was zeroed.
    pub fallback: bool,
    pub solution: QpSolution,
}

/// Solves one control tick. Non-optimal solves fall back to zero velocities.
pub fn control_tick(
    r1: &KinematicState,
    r2: &KinematicState,
    targets: &TaskTargets,
    gains: &TaskGains,
    constraints: &ConstraintSet,
    warm_start: Option<&[usize]>,
) -> Result<ControlOutput> {
    let p = assemble_task_qp(r1, r2, targets, gains, constraints)?;
    let opts = QpOptions {
        warm_start: warm_start.map(<[usize]>::to_vec),
        ..QpOptions::default()
    };
    let solution = qp::solve(&p, &opts)?;
    let fallback = !solution.is_optimal();
    if fallback {
        log::warn!("control QP returned {:?}; holding joints", solution.status);
    }
    let u = if fallback {
        SystemJoints::zeros()
    } else {
        SystemJoints::from_column_slice(solution.u.as_slice())
    };
    Ok(ControlOutput {
        u,
        status: solution.status,
        fallback,
        solution,
    })
}
