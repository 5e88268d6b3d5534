//! Plant perturbation and feasible initial configuration.

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, UnitQuaternion, Vector3};
use rand::Rng;

use crate::dq::Quaternion;
use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, param_class, JointVector, ParamClass, ParamVector, SerialChainModel, JOINTS, PARAMS,
};
use crate::task::switching_rotation_error;

use super::config::Perturbation;

/// `a_true = a_nominal + δ` with δ uniform in the per-class half-widths.
pub fn perturb<R: Rng>(nominal: &ParamVector, p: &Perturbation, rng: &mut R) -> ParamVector {
    ParamVector::from_fn(|i, _| {
        let half = match param_class(i) {
            ParamClass::Length => p.length,
            ParamClass::Angle => p.angle,
        };
        if half > 0.0 {
            nominal[i] + rng.random_range(-half..=half)
        } else {
            nominal[i]
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseTarget {
    pub rotation: Quaternion,
    pub translation: Quaternion,
}

/// Fraction of each joint range kept clear at the ends by inverse kinematics.
const LIMIT_MARGIN: f64 = 0.05;

/// Damped least-squares inverse kinematics on the effector pose.
pub fn inverse_kinematics(
    model: &SerialChainModel,
    a: &ParamVector,
    seed: &JointVector,
    target: &PoseTarget,
) -> Result<JointVector> {
    let lower = model.lower_limits();
    let upper = model.upper_limits();
    let margin = (upper - lower) * LIMIT_MARGIN;
    let (lo, hi) = (lower + margin, upper - margin);
    let mut q = seed.zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
    let mu2 = 1e-6;
    let mut err_norm = f64::INFINITY;
    for _ in 0..2000 {
        let s = forward_kinematics(model, &q, a)?;
        let et = s.translation - target.translation;
        let er = switching_rotation_error(&s.rotation, &target.rotation);
        let e = SVector::<f64, 7>::from_fn(|i, _| if i < 3 { et.imag()[i] } else { er.vec4()[i - 3] });
        err_norm = e.norm();
        if err_norm < 1e-11 {
            return Ok(q);
        }
        let jr = (target.rotation.hamilton_minus() * crate::dq::conjugation_matrix()) * s.jr_q;
        let j = SMatrix::<f64, 7, JOINTS>::from_fn(|i, k| if i < 3 { s.jt_q[(i + 1, k)] } else { jr[(i - 3, k)] });
        let h = j.transpose() * j + SMatrix::<f64, JOINTS, JOINTS>::identity() * mu2;
        let step = h
            .cholesky()
            .ok_or_else(|| Error::InfeasibleInit("inverse kinematics: singular step".into()))?
            .solve(&(j.transpose() * e));
        let scale = (0.2 / step.amax()).min(1.0);
        q = (q - step * scale).zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
    }
    Err(Error::InfeasibleInit(format!(
        "inverse kinematics did not converge (residual {err_norm:.3e})"
    )))
}

/// Rotation whose `−k̂` axis points along `forward`, with `î` horizontal.
pub fn look_at(forward: &Vector3<f64>) -> Quaternion {
    let z = -forward.normalize();
    let mut x = Vector3::z().cross(&z);
    if x.norm() < 1e-9 {
        x = Vector3::x();
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    from_rotation_matrix(&m)
}

pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Quaternion {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m)).into_inner();
    Quaternion::new(q.w, q.i, q.j, q.k)
}

/// Shortest rotation taking unit `from` to unit `to`.
pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Quaternion {
    match UnitQuaternion::rotation_between(from, to) {
        Some(q) => {
            let q = q.into_inner();
            Quaternion::new(q.w, q.i, q.j, q.k)
        }
        None => Quaternion::ONE,
    }
}

pub(crate) fn params_of(a: &crate::kinematics::SystemParams, branch: usize) -> ParamVector {
    ParamVector::from_column_slice(&a.as_slice()[branch * PARAMS..(branch + 1) * PARAMS])
}
