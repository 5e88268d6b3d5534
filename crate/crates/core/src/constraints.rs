//! Linear inequality rows for the control and adaptation QPs.
//!
//! Every task-space row is a velocity-damper (vector-field inequality): for a
//! constraint function `d` with safe value `d_safe`, the decision variable
//! `u` must satisfy `ḋ ≥ −η (d − d_safe)` when `d` must stay above the safe
//! value (keep-out) or `ḋ ≤ η (d_safe − d)` when it must stay below
//! (keep-in). Rows are normalized to `coefficients · u ≤ bound`.
//!
//! Row builders are agnostic to the decision variable: they take points and
//! frames carrying Jacobians over whatever vector is being solved for
//! (stacked joint velocities or stacked parameter rates).

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dq::{conjugation_matrix, PluckerLine, Quaternion};
use crate::error::{Error, Result};
use crate::kinematics::{
    Frame, JointVector, KinematicState, SerialChainModel, JOINTS, PARAMS, SYSTEM_JOINTS, SYSTEM_PARAMS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    JointLimit,
    PointPoint,
    PointPlane,
    PointLine,
    FovCone,
    FocalNear,
    FocalFar,
    ParamBox,
    Lyapunov,
}

impl ConstraintKind {
    /// Bit used in per-tick activity masks.
    pub fn bit(self) -> u32 {
        1 << (self as u32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub coefficients: DVector<f64>,
    pub bound: f64,
    pub kind: ConstraintKind,
}

impl ConstraintRow {
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        self.bound - self.coefficients.dot(u)
    }
}

/// Stacked `A u ≤ b` and `C u = d` rows over one decision vector.
#[derive(Clone, Debug, Default)]
pub struct ConstraintSet {
    pub inequalities: Vec<ConstraintRow>,
    pub equalities: Vec<(DVector<f64>, f64)>,
}

impl ConstraintSet {
    pub fn push(&mut self, row: ConstraintRow) {
        self.inequalities.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ConstraintRow>) {
        self.inequalities.extend(rows);
    }

    pub fn inequality_matrices(&self, n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let m = self.inequalities.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for (i, row) in self.inequalities.iter().enumerate() {
            if row.coefficients.len() != n {
                return Err(Error::Dimension(format!(
                    "{:?} row has {} coefficients, expected {n}",
                    row.kind,
                    row.coefficients.len()
                )));
            }
            a.set_row(i, &row.coefficients.transpose());
            b[i] = row.bound;
        }
        Ok((a, b))
    }

    pub fn equality_matrices(&self, n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let p = self.equalities.len();
        let mut c = DMatrix::zeros(p, n);
        let mut d = DVector::zeros(p);
        for (i, (row, rhs)) in self.equalities.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "equality row has {} coefficients, expected {n}",
                    row.len()
                )));
            }
            c.set_row(i, &row.transpose());
            d[i] = *rhs;
        }
        Ok((c, d))
    }

    /// Bitmask of the kinds of the rows listed in `active`.
    pub fn activity_mask(&self, active: &[usize]) -> u32 {
        active
            .iter()
            .filter_map(|&i| self.inequalities.get(i))
            .fold(0, |m, r| m | r.kind.bit())
    }
}

/// A point with its translation Jacobian (`4 × n`, `vec₄` rows) over a
/// decision vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedPoint {
    pub position: Quaternion,
    pub jacobian: DMatrix<f64>,
}

/// A frame with rotation and translation Jacobians over a decision vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedFrame {
    pub rotation: Quaternion,
    pub translation: Quaternion,
    pub jr: DMatrix<f64>,
    pub jt: DMatrix<f64>,
}

fn pad(block: &DMatrix<f64>, offset: usize, total: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(4, total);
    out.view_mut((0, offset), (4, block.ncols())).copy_from(block);
    out
}

impl TrackedFrame {
    /// Columns are the stacked joint velocities `[q̇₁; q̇₂]`; `branch` picks
    /// the block this state belongs to.
    pub fn joint_space(state: &KinematicState, branch: usize) -> Self {
        let jr = DMatrix::from_column_slice(4, JOINTS, state.jr_q.as_slice());
        let jt = DMatrix::from_column_slice(4, JOINTS, state.jt_q.as_slice());
        Self {
            rotation: state.rotation,
            translation: state.translation,
            jr: pad(&jr, branch * JOINTS, SYSTEM_JOINTS),
            jt: pad(&jt, branch * JOINTS, SYSTEM_JOINTS),
        }
    }

    /// Columns are the stacked parameter rates `[ȧ₁; ȧ₂]`.
    pub fn param_space(state: &KinematicState, branch: usize) -> Self {
        let jr = DMatrix::from_column_slice(4, PARAMS, state.jr_a.as_slice());
        let jt = DMatrix::from_column_slice(4, PARAMS, state.jt_a.as_slice());
        Self {
            rotation: state.rotation,
            translation: state.translation,
            jr: pad(&jr, branch * PARAMS, SYSTEM_PARAMS),
            jt: pad(&jt, branch * PARAMS, SYSTEM_PARAMS),
        }
    }

    pub fn point(&self) -> TrackedPoint {
        TrackedPoint {
            position: self.translation,
            jacobian: self.jt.clone(),
        }
    }
}

/// Which side of the safe value the constraint function must stay on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Zone {
    /// `d ≥ d_safe`
    KeepOut,
    /// `d ≤ d_safe`
    KeepIn,
}

fn damper_row(d: f64, grad: DVector<f64>, d_safe: f64, eta: f64, zone: Zone, kind: ConstraintKind) -> ConstraintRow {
    match zone {
        Zone::KeepOut => ConstraintRow {
            coefficients: -grad,
            bound: eta * (d - d_safe),
            kind,
        },
        Zone::KeepIn => ConstraintRow {
            coefficients: grad,
            bound: eta * (d_safe - d),
            kind,
        },
    }
}

fn vec4_of(v: &Vector3<f64>) -> Vector4<f64> {
    Vector4::new(0.0, v.x, v.y, v.z)
}

/// Distance `‖p_a − p_b‖` and its gradient. `None` when the points coincide.
pub fn point_point_distance(a: &TrackedPoint, b: &TrackedPoint) -> Option<(f64, DVector<f64>)> {
    let diff = (a.position - b.position).imag();
    let d = diff.norm();
    if d < 1e-12 {
        return None;
    }
    let dir = vec4_of(&(diff / d));
    let grad = (&a.jacobian - &b.jacobian).tr_mul(&DVector::from_column_slice(dir.as_slice()));
    Some((d, grad))
}

/// Point-to-point distance row. Coincident points have no distance gradient
/// and are skipped with a warning.
pub fn point_point_row(a: &TrackedPoint, b: &TrackedPoint, d_safe: f64, eta: f64, zone: Zone) -> Option<ConstraintRow> {
    let Some((d, grad)) = point_point_distance(a, b) else {
        log::warn!("point-point constraint skipped: coincident points");
        return None;
    };
    Some(damper_row(d, grad, d_safe, eta, zone, ConstraintKind::PointPoint))
}

/// Plane `n · p = offset` with unit normal `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn unit_normal(&self) -> Vector3<f64> {
        Vector3::from(self.normal).normalize()
    }

    pub fn signed_distance(&self, p: &Quaternion) -> f64 {
        self.unit_normal().dot(&p.imag()) - self.offset
    }
}

/// Keeps `p` at least `d_safe` on the positive side of `plane`.
pub fn point_plane_row(p: &TrackedPoint, plane: &Plane, d_safe: f64, eta: f64) -> ConstraintRow {
    let n = vec4_of(&plane.unit_normal());
    let d = plane.signed_distance(&p.position);
    let grad = p.jacobian.tr_mul(&DVector::from_column_slice(n.as_slice()));
    damper_row(d, grad, d_safe, eta, Zone::KeepOut, ConstraintKind::PointPlane)
}

/// Distance from `p` to `line` and its gradient. `None` on the line itself.
pub fn point_line_distance(p: &TrackedPoint, line: &PluckerLine) -> Option<(f64, DVector<f64>)> {
    let l = line.direction.imag();
    let w = (p.position.cross(&line.direction) - line.moment).imag();
    let d = w.norm();
    if d < 1e-12 {
        return None;
    }
    // d/dt (p × l) = −[l]× ṗ
    let dw_dp = -Matrix3::new(0.0, -l.z, l.y, l.z, 0.0, -l.x, -l.y, l.x, 0.0);
    let g3 = dw_dp.transpose() * (w / d);
    let grad = p.jacobian.tr_mul(&DVector::from_column_slice(vec4_of(&g3).as_slice()));
    Some((d, grad))
}

/// Keeps `p` at least `d_safe` away from `line`.
pub fn point_line_row(p: &TrackedPoint, line: &PluckerLine, d_safe: f64, eta: f64) -> Option<ConstraintRow> {
    let Some((d, grad)) = point_line_distance(p, line) else {
        log::warn!("point-line constraint skipped: point on the line");
        return None;
    };
    Some(damper_row(
        d,
        grad,
        d_safe,
        eta,
        Zone::KeepOut,
        ConstraintKind::PointLine,
    ))
}

/// `Ad(r)(−k̂)`: the optical axis of a camera frame in world coordinates.
pub fn optical_axis(r: &Quaternion) -> Quaternion {
    let mut c = *r * -Quaternion::K * r.conj();
    c.w = 0.0;
    c
}

/// Jacobian of `vec₄ Ad(r)(p)` for a constant pure `p`, given `J_r`.
pub fn adjoint_jacobian(r: &Quaternion, p: &Quaternion, jr: &DMatrix<f64>) -> DMatrix<f64> {
    let m: Matrix4<f64> = (*p * r.conj()).hamilton_minus() + (*r * *p).hamilton_plus() * conjugation_matrix();
    to_dmatrix(&m) * jr
}

pub(crate) fn to_dmatrix(m: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 4, m.as_slice())
}

/// Jacobian of `vec₄ (h/‖h‖)` given `J_h`.
pub fn normalized_direction_jacobian(h: &Quaternion, jh: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.norm();
    let l = h.vec4() / n;
    let proj = (Matrix4::identity() - l * l.transpose()) / n;
    to_dmatrix(&proj) * jh
}

/// Cone margin `g = (optical axis) · l − cos θ_safe` and its gradient, where
/// `l` is the unit direction from the camera position to the tip.
pub fn fov_cone_margin(camera: &TrackedFrame, tip: &TrackedPoint, theta_safe: f64) -> Result<(f64, DVector<f64>)> {
    let h = tip.position - camera.translation;
    if h.norm() <= crate::camera::D_MIN {
        return Err(Error::Degenerate("tool tip at the optical center".into()));
    }
    let l = h * (1.0 / h.norm());
    let c = optical_axis(&camera.rotation);
    let g = c.dot(&l) - theta_safe.cos();
    let jc = adjoint_jacobian(&camera.rotation, &-Quaternion::K, &camera.jr);
    let jl = normalized_direction_jacobian(&h, &(&tip.jacobian - &camera.jt));
    let lv = DVector::from_column_slice(l.vec4().as_slice());
    let cv = DVector::from_column_slice(c.vec4().as_slice());
    let grad = jc.tr_mul(&lv) + jl.tr_mul(&cv);
    Ok((g, grad))
}

/// Keeps the tip inside the cone of half-angle `theta_safe` around the optical axis.
pub fn fov_cone_row(camera: &TrackedFrame, tip: &TrackedPoint, theta_safe: f64, eta: f64) -> Result<ConstraintRow> {
    let (g, grad) = fov_cone_margin(camera, tip, theta_safe)?;
    Ok(damper_row(g, grad, 0.0, eta, Zone::KeepOut, ConstraintKind::FovCone))
}

/// Complementary pair keeping `‖t_tip − t_oc‖` within `d_image ± band`.
pub fn focal_band_rows(
    camera: &TrackedFrame,
    tip: &TrackedPoint,
    d_image: f64,
    band: f64,
    eta: f64,
) -> Result<[ConstraintRow; 2]> {
    if !(band > 0.0) {
        return Err(Error::Config(format!("focal band must be positive, got {band}")));
    }
    let (d, grad) = point_point_distance(tip, &camera.point())
        .ok_or_else(|| Error::Degenerate("tool tip at the optical center".into()))?;
    let mut near = damper_row(
        d,
        grad.clone(),
        d_image - band,
        eta,
        Zone::KeepOut,
        ConstraintKind::FocalNear,
    );
    let mut far = damper_row(d, grad, d_image + band, eta, Zone::KeepIn, ConstraintKind::FocalFar);
    near.kind = ConstraintKind::FocalNear;
    far.kind = ConstraintKind::FocalFar;
    Ok([near, far])
}

/// Position/rate box rows for a block of scalar variables:
/// `u ≤ min(rate, η(upper − x))` and `−u ≤ min(rate, η(x − lower))`.
#[allow(clippy::too_many_arguments)]
pub fn box_rows(
    value: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_rate: &[f64],
    eta: f64,
    offset: usize,
    total: usize,
    kind: ConstraintKind,
) -> Vec<ConstraintRow> {
    let mut rows = Vec::with_capacity(2 * value.len());
    for k in 0..value.len() {
        let mut up = DVector::zeros(total);
        up[offset + k] = 1.0;
        rows.push(ConstraintRow {
            bound: max_rate[k].min(eta * (upper[k] - value[k])),
            coefficients: up.clone(),
            kind,
        });
        rows.push(ConstraintRow {
            coefficients: -up,
            bound: max_rate[k].min(eta * (value[k] - lower[k])),
            kind,
        });
    }
    rows
}

/// Joint position/velocity limit rows for one branch, placed at column
/// `branch * 8` of the stacked joint-velocity vector.
pub fn joint_limit_rows(model: &SerialChainModel, q: &JointVector, eta: f64, branch: usize) -> Vec<ConstraintRow> {
    let lower: Vec<f64> = model.limits.iter().map(|l| l.min).collect();
    let upper: Vec<f64> = model.limits.iter().map(|l| l.max).collect();
    let rate: Vec<f64> = model.limits.iter().map(|l| l.max_velocity).collect();
    box_rows(
        q.as_slice(),
        &lower,
        &upper,
        &rate,
        eta,
        branch * JOINTS,
        SYSTEM_JOINTS,
        ConstraintKind::JointLimit,
    )
}

/// `(W_q, w_q)` for one branch in matrix form (16 × 8 columns of the branch).
pub fn joint_limit_matrices(model: &SerialChainModel, q: &JointVector, eta: f64) -> (DMatrix<f64>, DVector<f64>) {
    let rows = joint_limit_rows(model, q, eta, 0);
    let mut w = DMatrix::zeros(rows.len(), JOINTS);
    let mut b = DVector::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        w.set_row(i, &r.coefficients.rows(0, JOINTS).transpose());
        b[i] = r.bound;
    }
    (w, b)
}

/// Where a collision point sits on a branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub frame: Frame,
    #[serde(default)]
    pub offset: [f64; 3],
}

/// Which workspace surface an environment point is kept away from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    /// Stay above the top plane of the work stage.
    TopPlane,
    /// Stay outside the work-stage cylinder (distance to its axis).
    CylinderWall,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPoint {
    pub attachment: Attachment,
    pub surface: Surface,
}

/// Central work stage: vertical cylinder capped by a top plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    /// A point on the cylinder axis.
    pub axis_point: [f64; 3],
    pub axis_direction: [f64; 3],
    pub radius: f64,
    /// Top plane, normal pointing away from the stage.
    pub top: Plane,
}

impl Workspace {
    pub fn axis(&self) -> Result<PluckerLine> {
        PluckerLine::through(
            &Quaternion::from_vec3(&Vector3::from(self.axis_point)),
            &Quaternion::from_vec3(&Vector3::from(self.axis_direction)),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionGeometry {
    /// Environment-avoidance points of each branch.
    pub environment_points: [Vec<EnvironmentPoint>; 2],
    /// Points paired index-wise between the branches.
    pub inter_robot_points: [Vec<Attachment>; 2],
    pub workspace: Workspace,
    /// Clearance above the top plane, m.
    pub plane_clearance: f64,
    /// Clearance outside the cylinder wall, m.
    pub wall_clearance: f64,
    /// Minimum distance between paired inter-robot points, m.
    pub inter_robot_distance: f64,
    /// Damper gain η_d, 1/s.
    pub eta: f64,
}

impl CollisionGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.plane_clearance > 0.0 && self.wall_clearance > 0.0 && self.inter_robot_distance > 0.0) {
            return Err(Error::Config("collision safe distances must be positive".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config("collision gain must be positive".into()));
        }
        if self.inter_robot_points[0].len() != self.inter_robot_points[1].len() {
            return Err(Error::Config("inter-robot point lists must pair up".into()));
        }
        if !(self.workspace.radius > 0.0) {
            return Err(Error::Config("workspace radius must be positive".into()));
        }
        Ok(())
    }
}
