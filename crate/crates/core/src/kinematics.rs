//! Parameterized forward kinematics of one 8-DoF robot branch.
//!
//! A branch is the product of elementary screw factors
//!
//! ```text
//! base(a) · Π_k [ Rz(θ_k) Tz(d_k) Tx(a_k) Rx(α_k) ] · effector(a)
//! ```
//!
//! where a revolute joint adds `q_k` to `θ_k` and a prismatic joint adds
//! `q_k` to `d_k`. Base and effector poses are `T(x,y,z) · Rx(rx) Ry(ry) Rz(rz)`
//! (intrinsic xyz Euler angles).
//!
//! Parameter vector layout (44 entries):
//!
//! | index     | content                              |
//! |-----------|--------------------------------------|
//! | `4k..4k+4`| joint `k` DH row `(θ, d, a, α)`      |
//! | `32..35`  | base translation `(x, y, z)` in m    |
//! | `35..38`  | base rotation `(rx, ry, rz)` in rad  |
//! | `38..41`  | effector translation in m            |
//! | `41..44`  | effector rotation in rad             |
//!
//! Every factor depends on exactly one scalar `s`, and `dX/ds = X ξ` for a
//! constant generator `ξ` (`½v` for rotations, `½εv` for translations), so
//! the derivative of the whole product with respect to `s` is
//! `prefix · ξ · suffix`. Jacobians with respect to both `q` and `a` are
//! assembled from those prefix/suffix products.

use nalgebra::{Matrix4, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dq::{DualQuaternion, Quaternion};
use crate::error::{Error, Result};

pub const JOINTS: usize = 8;
pub const PARAMS: usize = 44;
pub const SYSTEM_JOINTS: usize = 2 * JOINTS;
pub const SYSTEM_PARAMS: usize = 2 * PARAMS;

pub type JointVector = SVector<f64, JOINTS>;
pub type ParamVector = SVector<f64, PARAMS>;
pub type SystemJoints = SVector<f64, SYSTEM_JOINTS>;
pub type SystemParams = SVector<f64, SYSTEM_PARAMS>;
pub type JointJacobian = SMatrix<f64, 4, JOINTS>;
pub type ParamJacobian = SMatrix<f64, 4, PARAMS>;

/// Offsets into the 44-entry parameter vector.
pub mod layout {
    pub const BASE_TRANSLATION: usize = 32;
    pub const BASE_ROTATION: usize = 35;
    pub const EFFECTOR_TRANSLATION: usize = 38;
    pub const EFFECTOR_ROTATION: usize = 41;

    pub const THETA: usize = 0;
    pub const D: usize = 1;
    pub const A: usize = 2;
    pub const ALPHA: usize = 3;

    /// Index of DH field `field` of joint `joint` (0-based).
    pub const fn dh(joint: usize, field: usize) -> usize {
        4 * joint + field
    }
}

/// Whether a parameter is a length (m) or an angle (rad).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamClass {
    Length,
    Angle,
}

pub fn param_class(index: usize) -> ParamClass {
    use layout::*;
    match index {
        i if i < BASE_TRANSLATION => match i % 4 {
            THETA | ALPHA => ParamClass::Angle,
            _ => ParamClass::Length,
        },
        i if i < BASE_ROTATION => ParamClass::Length,
        i if i < EFFECTOR_TRANSLATION => ParamClass::Angle,
        i if i < EFFECTOR_ROTATION => ParamClass::Length,
        _ => ParamClass::Angle,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub min: f64,
    pub max: f64,
    pub max_velocity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DhRow {
    pub theta: f64,
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
}

/// Translation (m) followed by intrinsic xyz rotation (rad).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseParams {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl PoseParams {
    pub fn to_dual_quaternion(&self) -> DualQuaternion {
        let [x, y, z] = self.translation;
        let [rx, ry, rz] = self.rotation;
        let r = Quaternion::from_axis_angle(&Vector3::x(), rx)
            * Quaternion::from_axis_angle(&Vector3::y(), ry)
            * Quaternion::from_axis_angle(&Vector3::z(), rz);
        DualQuaternion::from_rotation_translation(r, Quaternion::pure(x, y, z))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SerialChainModel {
    pub joint_kinds: [JointKind; JOINTS],
    pub dh: [DhRow; JOINTS],
    pub base: PoseParams,
    pub effector: PoseParams,
    pub limits: [JointLimits; JOINTS],
}

impl SerialChainModel {
    pub fn validate(&self) -> Result<()> {
        for (k, l) in self.limits.iter().enumerate() {
            if !(l.min < l.max) {
                return Err(Error::Config(format!(
                    "joint {}: limits require min < max (got {} .. {})",
                    k + 1,
                    l.min,
                    l.max
                )));
            }
            if !(l.max_velocity > 0.0) {
                return Err(Error::Config(format!("joint {}: max_velocity must be positive", k + 1)));
            }
        }
        if !self.parameters().iter().all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite kinematic parameter".into()));
        }
        Ok(())
    }

    /// Nominal parameters packed in the documented layout.
    pub fn parameters(&self) -> ParamVector {
        let mut a = ParamVector::zeros();
        for (k, row) in self.dh.iter().enumerate() {
            a[layout::dh(k, layout::THETA)] = row.theta;
            a[layout::dh(k, layout::D)] = row.d;
            a[layout::dh(k, layout::A)] = row.a;
            a[layout::dh(k, layout::ALPHA)] = row.alpha;
        }
        for i in 0..3 {
            a[layout::BASE_TRANSLATION + i] = self.base.translation[i];
            a[layout::BASE_ROTATION + i] = self.base.rotation[i];
            a[layout::EFFECTOR_TRANSLATION + i] = self.effector.translation[i];
            a[layout::EFFECTOR_ROTATION + i] = self.effector.rotation[i];
        }
        a
    }

    /// Copy of the model with its nominal parameters replaced by `a`.
    pub fn with_parameters(&self, a: &ParamVector) -> Self {
        let mut m = self.clone();
        for (k, row) in m.dh.iter_mut().enumerate() {
            row.theta = a[layout::dh(k, layout::THETA)];
            row.d = a[layout::dh(k, layout::D)];
            row.a = a[layout::dh(k, layout::A)];
            row.alpha = a[layout::dh(k, layout::ALPHA)];
        }
        for i in 0..3 {
            m.base.translation[i] = a[layout::BASE_TRANSLATION + i];
            m.base.rotation[i] = a[layout::BASE_ROTATION + i];
            m.effector.translation[i] = a[layout::EFFECTOR_TRANSLATION + i];
            m.effector.rotation[i] = a[layout::EFFECTOR_ROTATION + i];
        }
        m
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from_fn(|k, _| self.limits[k].min)
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from_fn(|k, _| self.limits[k].max)
    }
}

/// Where on the chain a frame is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// After the base pose, before joint 1.
    Base,
    /// After joint `k` (1-based, `1..=8`).
    Link(usize),
    /// After the effector pose (tool tip / optical center).
    Effector,
}

/// Pose of one frame of a branch together with its four Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicState {
    pub pose: DualQuaternion,
    pub rotation: Quaternion,
    pub translation: Quaternion,
    /// `vec₄ ṙ = J_r_q q̇ + J_r_a ȧ`
    pub jr_q: JointJacobian,
    pub jt_q: JointJacobian,
    pub jr_a: ParamJacobian,
    pub jt_a: ParamJacobian,
}

#[derive(Clone, Copy)]
struct Factor {
    value: DualQuaternion,
    generator: DualQuaternion,
    param: Option<usize>,
    joint: Option<usize>,
}

fn rotation_factor(axis: Vector3<f64>, angle: f64, param: Option<usize>, joint: Option<usize>) -> Factor {
    Factor {
        value: DualQuaternion::from_rotation(Quaternion::from_axis_angle(&axis, angle)),
        generator: DualQuaternion::from_rotation(Quaternion::from_vec3(&(axis * 0.5))),
        param,
        joint,
    }
}

fn translation_factor(axis: Vector3<f64>, dist: f64, param: Option<usize>, joint: Option<usize>) -> Factor {
    Factor {
        value: DualQuaternion::from_translation(Quaternion::from_vec3(&(axis * dist))),
        generator: DualQuaternion::new(Quaternion::ZERO, Quaternion::from_vec3(&(axis * 0.5))),
        param,
        joint,
    }
}

fn pose_factors(out: &mut Vec<Factor>, a: &ParamVector, translation: usize, rotation: usize) {
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    for (i, axis) in axes.iter().enumerate() {
        out.push(translation_factor(
            *axis,
            a[translation + i],
            Some(translation + i),
            None,
        ));
    }
    for (i, axis) in axes.iter().enumerate() {
        out.push(rotation_factor(*axis, a[rotation + i], Some(rotation + i), None));
    }
}

fn chain_factors(model: &SerialChainModel, q: &JointVector, a: &ParamVector, frame: Frame) -> Result<Vec<Factor>> {
    let joints = match frame {
        Frame::Base => 0,
        Frame::Link(k) if (1..=JOINTS).contains(&k) => k,
        Frame::Link(k) => {
            return Err(Error::Dimension(format!("link index {k} outside 1..={JOINTS}")));
        }
        Frame::Effector => JOINTS,
    };
    let mut factors = Vec::with_capacity(PARAMS + 1);
    pose_factors(&mut factors, a, layout::BASE_TRANSLATION, layout::BASE_ROTATION);
    for k in 0..joints {
        let (theta, d) = match model.joint_kinds[k] {
            JointKind::Revolute => (a[layout::dh(k, layout::THETA)] + q[k], a[layout::dh(k, layout::D)]),
            JointKind::Prismatic => (a[layout::dh(k, layout::THETA)], a[layout::dh(k, layout::D)] + q[k]),
        };
        let (jr, jp) = match model.joint_kinds[k] {
            JointKind::Revolute => (Some(k), None),
            JointKind::Prismatic => (None, Some(k)),
        };
        factors.push(rotation_factor(
            Vector3::z(),
            theta,
            Some(layout::dh(k, layout::THETA)),
            jr,
        ));
        factors.push(translation_factor(Vector3::z(), d, Some(layout::dh(k, layout::D)), jp));
        factors.push(translation_factor(
            Vector3::x(),
            a[layout::dh(k, layout::A)],
            Some(layout::dh(k, layout::A)),
            None,
        ));
        factors.push(rotation_factor(
            Vector3::x(),
            a[layout::dh(k, layout::ALPHA)],
            Some(layout::dh(k, layout::ALPHA)),
            None,
        ));
    }
    if frame == Frame::Effector {
        pose_factors(&mut factors, a, layout::EFFECTOR_TRANSLATION, layout::EFFECTOR_ROTATION);
    }
    Ok(factors)
}

/// Effector pose and Jacobians at joint values `q` under parameters `a`.
pub fn forward_kinematics(model: &SerialChainModel, q: &JointVector, a: &ParamVector) -> Result<KinematicState> {
    frame_kinematics(model, q, a, Frame::Effector, &Vector3::zeros())
}

/// Pose and Jacobians of `frame` displaced by `offset` (expressed in that frame).
pub fn frame_kinematics(
    model: &SerialChainModel,
    q: &JointVector,
    a: &ParamVector,
    frame: Frame,
    offset: &Vector3<f64>,
) -> Result<KinematicState> {
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("forward_kinematics: q"));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("forward_kinematics: a"));
    }
    let mut factors = chain_factors(model, q, a, frame)?;
    if offset.norm() > 0.0 {
        factors.push(Factor {
            value: DualQuaternion::from_translation(Quaternion::from_vec3(offset)),
            generator: DualQuaternion::ONE,
            param: None,
            joint: None,
        });
    }

    let n = factors.len();
    // prefix[k] = X_1 … X_k, suffix[k] = X_{k+1} … X_n
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(DualQuaternion::ONE);
    for f in &factors {
        let last = *prefix.last().unwrap();
        prefix.push(last * f.value);
    }
    let mut suffix = vec![DualQuaternion::ONE; n + 1];
    for k in (0..n).rev() {
        suffix[k] = factors[k].value * suffix[k + 1];
    }

    let pose = prefix[n];
    let r = pose.rotation();
    let t = pose.translation();
    let mut state = KinematicState {
        pose,
        rotation: r,
        translation: t,
        jr_q: JointJacobian::zeros(),
        jt_q: JointJacobian::zeros(),
        jr_a: ParamJacobian::zeros(),
        jt_a: ParamJacobian::zeros(),
    };

    for (k, f) in factors.iter().enumerate() {
        if f.param.is_none() && f.joint.is_none() {
            continue;
        }
        let dx = prefix[k + 1] * f.generator * suffix[k + 1];
        let dr = dx.primary;
        // t = 2 d r*  ⇒  ṫ = 2 (ḋ r* + d ṙ*)
        let dt = (dx.dual * r.conj() + pose.dual * dr.conj()) * 2.0;
        let (dr, mut dt) = (dr.vec4(), dt.vec4());
        dt[0] = 0.0;
        if let Some(p) = f.param {
            state.jr_a.set_column(p, &dr);
            state.jt_a.set_column(p, &dt);
        }
        if let Some(j) = f.joint {
            state.jr_q.set_column(j, &dr);
            state.jt_q.set_column(j, &dt);
        }
    }
    Ok(state)
}

/// Maximum relative discrepancy `|analytic − fd| / (1 + |analytic|)` between the
/// analytic Jacobians and central differences with step `eps`.
pub fn jacobians_fd_check(model: &SerialChainModel, q: &JointVector, a: &ParamVector, eps: f64) -> Result<f64> {
    jacobians_fd_check_at(model, q, a, Frame::Effector, &Vector3::zeros(), eps)
}

pub fn jacobians_fd_check_at(
    model: &SerialChainModel,
    q: &JointVector,
    a: &ParamVector,
    frame: Frame,
    offset: &Vector3<f64>,
    eps: f64,
) -> Result<f64> {
    let state = frame_kinematics(model, q, a, frame, offset)?;
    let eval = |q: &JointVector, a: &ParamVector| -> Result<(Vector4<f64>, Vector4<f64>)> {
        let s = frame_kinematics(model, q, a, frame, offset)?;
        Ok((s.rotation.vec4(), s.translation.vec4()))
    };
    let mut worst = 0.0f64;
    let mut compare = |analytic_r: Vector4<f64>, analytic_t: Vector4<f64>, fd_r: Vector4<f64>, fd_t: Vector4<f64>| {
        for i in 0..4 {
            worst = worst.max((analytic_r[i] - fd_r[i]).abs() / (1.0 + analytic_r[i].abs()));
            worst = worst.max((analytic_t[i] - fd_t[i]).abs() / (1.0 + analytic_t[i].abs()));
        }
    };
    for j in 0..JOINTS {
        let mut qp = *q;
        let mut qm = *q;
        qp[j] += eps;
        qm[j] -= eps;
        let (rp, tp) = eval(&qp, a)?;
        let (rm, tm) = eval(&qm, a)?;
        compare(
            state.jr_q.column(j).into(),
            state.jt_q.column(j).into(),
            (rp - rm) / (2.0 * eps),
            (tp - tm) / (2.0 * eps),
        );
    }
    for p in 0..PARAMS {
        let mut ap = *a;
        let mut am = *a;
        ap[p] += eps;
        am[p] -= eps;
        let (rp, tp) = eval(q, &ap)?;
        let (rm, tm) = eval(q, &am)?;
        compare(
            state.jr_a.column(p).into(),
            state.jt_a.column(p).into(),
            (rp - rm) / (2.0 * eps),
            (tp - tm) / (2.0 * eps),
        );
    }
    Ok(worst)
}

/// Homogeneous transform of a pose (rotation matrix + translation).
pub fn homogeneous(x: &DualQuaternion) -> Matrix4<f64> {
    let r = x.rotation();
    let t = x.translation();
    let mut m = Matrix4::identity();
    for (c, e) in [Quaternion::I, Quaternion::J, Quaternion::K].iter().enumerate() {
        let col = (r * *e * r.conj()).imag();
        m.fixed_view_mut::<3, 1>(0, c).copy_from(&col);
    }
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t.imag());
    m
}

/// Pads a per-branch Jacobian into the stacked two-branch column space.
pub fn stack_joint_jacobian(j: &JointJacobian, branch: usize) -> SMatrix<f64, 4, SYSTEM_JOINTS> {
    let mut out = SMatrix::<f64, 4, SYSTEM_JOINTS>::zeros();
    out.fixed_view_mut::<4, JOINTS>(0, branch * JOINTS).copy_from(j);
    out
}

pub fn stack_param_jacobian(j: &ParamJacobian, branch: usize) -> SMatrix<f64, 4, SYSTEM_PARAMS> {
    let mut out = SMatrix::<f64, 4, SYSTEM_PARAMS>::zeros();
    out.fixed_view_mut::<4, PARAMS>(0, branch * PARAMS).copy_from(j);
    out
}
