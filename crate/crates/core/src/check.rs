//! Finite-difference self-check of every analytic Jacobian.
//!
//! Random two-branch systems are drawn from a seeded generator and each
//! analytic Jacobian is compared entry-wise against central differences of
//! the map it differentiates.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptive::{adaptation_jacobian, estimated_measurement, line_direction_param_jacobian};
use crate::camera::estimated_line_direction;
use crate::constraints::{
    fov_cone_margin, point_line_distance, point_plane_row, point_point_distance, Plane, TrackedFrame, TrackedPoint,
};
use crate::dq::{PluckerLine, Quaternion};
use crate::error::Result;
use crate::kinematics::{
    frame_kinematics, jacobians_fd_check_at, DhRow, Frame, JointKind, JointLimits, JointVector, KinematicState,
    ParamVector, PoseParams, SerialChainModel, JOINTS, PARAMS,
};

pub const FD_STEP: f64 = 1e-6;
/// Pass threshold on `|analytic − fd| / (1 + |analytic|)`.
pub const FD_TOL: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub trials: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

fn sym(rng: &mut impl Rng, half: f64) -> f64 {
    rng.random_range(-half..half)
}

pub fn random_model(rng: &mut impl Rng) -> SerialChainModel {
    let mut pose = |reach: f64| PoseParams {
        translation: [sym(rng, reach), sym(rng, reach), sym(rng, reach)],
        rotation: [sym(rng, PI), sym(rng, PI), sym(rng, PI)],
    };
    let base = pose(0.5);
    let effector = pose(0.1);
    SerialChainModel {
        joint_kinds: std::array::from_fn(|_| {
            if rng.random_bool(0.25) {
                JointKind::Prismatic
            } else {
                JointKind::Revolute
            }
        }),
        dh: std::array::from_fn(|_| DhRow {
            theta: sym(rng, PI),
            d: sym(rng, 0.3),
            a: sym(rng, 0.3),
            alpha: sym(rng, PI),
        }),
        base,
        effector,
        limits: [JointLimits {
            min: -PI,
            max: PI,
            max_velocity: 1.0,
        }; JOINTS],
    }
}

fn random_frame(rng: &mut impl Rng) -> Frame {
    match rng.random_range(0..10) {
        0 => Frame::Base,
        9 => Frame::Effector,
        _ => Frame::Link(rng.random_range(1..=JOINTS)),
    }
}

fn random_offset(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(sym(rng, 0.1), sym(rng, 0.1), sym(rng, 0.1))
}

fn fd(f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = f(x)?.len();
    let mut out = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[j] += FD_STEP;
        xm[j] -= FD_STEP;
        out.set_column(j, &((f(&xp)? - f(&xm)?) / (2.0 * FD_STEP)));
    }
    Ok(out)
}

fn rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, f)| (a - f).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

fn scalar_err(grad: &DVector<f64>, f: impl Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>) -> Result<f64> {
    let numeric = fd(|x| Ok(DVector::from_element(1, f(x)?)), x)?;
    Ok(rel_err(
        &DMatrix::from_row_slice(1, grad.len(), grad.as_slice()),
        &numeric,
    ))
}

fn v4(q: &Quaternion) -> DVector<f64> {
    DVector::from_column_slice(q.vec4().as_slice())
}

/// A tool branch and a camera branch with stacked `q` (16) and `a` (88).
#[derive(Clone)]
struct Pair {
    models: [SerialChainModel; 2],
    q: DVector<f64>,
    a: DVector<f64>,
}

impl Pair {
    fn random(rng: &mut impl Rng) -> Self {
        let models = [random_model(rng), random_model(rng)];
        let a = DVector::from_iterator(
            2 * PARAMS,
            models
                .iter()
                .flat_map(|m| m.parameters().iter().copied().collect::<Vec<_>>()),
        );
        let q = DVector::from_fn(2 * JOINTS, |_, _| sym(rng, 1.5));
        Self { models, q, a }
    }

    fn state(
        &self,
        q: &DVector<f64>,
        a: &DVector<f64>,
        branch: usize,
        frame: Frame,
        offset: &Vector3<f64>,
    ) -> Result<KinematicState> {
        frame_kinematics(
            &self.models[branch],
            &JointVector::from_column_slice(&q.as_slice()[branch * JOINTS..(branch + 1) * JOINTS]),
            &ParamVector::from_column_slice(&a.as_slice()[branch * PARAMS..(branch + 1) * PARAMS]),
            frame,
            offset,
        )
    }

    fn effectors(&self, q: &DVector<f64>, a: &DVector<f64>) -> Result<(KinematicState, KinematicState)> {
        Ok((
            self.state(q, a, 0, Frame::Effector, &Vector3::zeros())?,
            self.state(q, a, 1, Frame::Effector, &Vector3::zeros())?,
        ))
    }

    fn param_frames(&self) -> Result<(TrackedPoint, TrackedFrame)> {
        let (t, c) = self.effectors(&self.q, &self.a)?;
        Ok((
            TrackedFrame::param_space(&t, 0).point(),
            TrackedFrame::param_space(&c, 1),
        ))
    }

    fn sight_length(&self) -> Result<f64> {
        let (t, c) = self.effectors(&self.q, &self.a)?;
        Ok((t.translation - c.translation).norm())
    }

    fn non_degenerate(rng: &mut impl Rng) -> Result<Self> {
        loop {
            let p = Self::random(rng);
            if p.sight_length()? > 0.05 {
                return Ok(p);
            }
        }
    }
}

/// `J_r,q`, `J_t,q`, `J_r,â`, `J_t,â` at random frames and offsets.
pub fn kinematics_suite(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let model = random_model(&mut rng);
        let q = JointVector::from_fn(|_, _| sym(&mut rng, 1.5));
        let frame = random_frame(&mut rng);
        let offset = random_offset(&mut rng);
        worst = worst.max(jacobians_fd_check_at(
            &model,
            &q,
            &model.parameters(),
            frame,
            &offset,
            FD_STEP,
        )?);
    }
    Ok(worst)
}

/// Sight-line direction and measurement Jacobians over `â`.
pub fn sight_line_suite(seed: u64, trials: usize) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut line, mut meas) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let p = Pair::non_degenerate(&mut rng)?;
        let (tip, cam) = p.param_frames()?;
        let numeric_l = fd(
            |a| {
                let (t, c) = p.effectors(&p.q, a)?;
                Ok(v4(&estimated_line_direction(&t.translation, &c.translation)?))
            },
            &p.a,
        )?;
        line = line.max(rel_err(&line_direction_param_jacobian(&tip, &cam)?, &numeric_l));
        let numeric_y = fd(
            |a| {
                let (t, c) = p.effectors(&p.q, a)?;
                let tip = TrackedFrame::param_space(&t, 0).point();
                Ok(v4(&estimated_measurement(&tip, &TrackedFrame::param_space(&c, 1))?))
            },
            &p.a,
        )?;
        meas = meas.max(rel_err(&adaptation_jacobian(&tip, &cam)?, &numeric_y));
    }
    Ok((line, meas))
}

/// Point-point, point-plane, point-line and cone gradients over `q`, and the
/// cone gradient over `â`.
pub fn constraint_suite(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: f64 = 0.3;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = Pair::non_degenerate(&mut rng)?;
        let (fa, fb) = (random_frame(&mut rng), random_frame(&mut rng));
        let (oa, ob) = (random_offset(&mut rng), random_offset(&mut rng));
        let point = |q: &DVector<f64>, branch: usize, frame, offset| -> Result<Quaternion> {
            Ok(p.state(q, &p.a, branch, frame, offset)?.translation)
        };
        let pa = TrackedFrame::joint_space(&p.state(&p.q, &p.a, 0, fa, &oa)?, 0).point();
        let pb = TrackedFrame::joint_space(&p.state(&p.q, &p.a, 1, fb, &ob)?, 1).point();

        if let Some((_, grad)) = point_point_distance(&pa, &pb) {
            let f = |q: &DVector<f64>| Ok((point(q, 0, fa, &oa)? - point(q, 1, fb, &ob)?).norm());
            worst = worst.max(scalar_err(&grad, f, &p.q)?);
        }

        let normal = Vector3::new(sym(&mut rng, 1.0), sym(&mut rng, 1.0), sym(&mut rng, 1.0)).normalize();
        let plane = Plane {
            normal: normal.into(),
            offset: sym(&mut rng, 0.2),
        };
        let row = point_plane_row(&pa, &plane, 0.0, 1.0);
        let f = |q: &DVector<f64>| Ok(plane.signed_distance(&point(q, 0, fa, &oa)?));
        worst = worst.max(scalar_err(&-row.coefficients, f, &p.q)?);

        let through = Quaternion::pure(sym(&mut rng, 0.3), sym(&mut rng, 0.3), sym(&mut rng, 0.3));
        let dir = Quaternion::from_vec3(
            &Vector3::new(sym(&mut rng, 1.0), sym(&mut rng, 1.0), sym(&mut rng, 1.0)).normalize(),
        );
        let line = PluckerLine::through(&through, &dir)?;
        if let Some((_, grad)) = point_line_distance(&pa, &line) {
            let f = |q: &DVector<f64>| Ok(line.distance(&point(q, 0, fa, &oa)?));
            worst = worst.max(scalar_err(&grad, f, &p.q)?);
        }

        let margin = |q: &DVector<f64>, a: &DVector<f64>, joint: bool| -> Result<(f64, DVector<f64>)> {
            let (t, c) = p.effectors(q, a)?;
            let (tip, cam) = if joint {
                (
                    TrackedFrame::joint_space(&t, 0).point(),
                    TrackedFrame::joint_space(&c, 1),
                )
            } else {
                (
                    TrackedFrame::param_space(&t, 0).point(),
                    TrackedFrame::param_space(&c, 1),
                )
            };
            fov_cone_margin(&cam, &tip, theta)
        };
        let (_, grad_q) = margin(&p.q, &p.a, true)?;
        worst = worst.max(scalar_err(&grad_q, |q| Ok(margin(q, &p.a, true)?.0), &p.q)?);
        let (_, grad_a) = margin(&p.q, &p.a, false)?;
        worst = worst.max(scalar_err(&grad_a, |a| Ok(margin(&p.q, a, false)?.0), &p.a)?);
    }
    Ok(worst)
}

/// Runs every suite with `trials` random states each.
pub fn run_all(seed: u64, trials: usize) -> Result<Vec<SuiteResult>> {
    let result = |name, worst| SuiteResult {
        name,
        trials,
        worst,
        tolerance: FD_TOL,
    };
    let (line, meas) = sight_line_suite(seed.wrapping_add(1), trials)?;
    Ok(vec![
        result("kinematics", kinematics_suite(seed, trials)?),
        result("sight-line", line),
        result("measurement", meas),
        result("constraints", constraint_suite(seed.wrapping_add(2), trials)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_a_few_states() {
        for r in run_all(3, 5).unwrap() {
            assert!(r.passed(), "{} worst {:.3e}", r.name, r.worst);
        }
    }
}
