//! Shared random-state generators and finite-difference oracles.
#![allow(dead_code)]

use fovctl::constraints::{TrackedFrame, TrackedPoint};
use fovctl::kinematics::{
    frame_kinematics, homogeneous, DhRow, Frame, JointKind, JointLimits, JointVector, KinematicState, ParamVector,
    PoseParams, SerialChainModel, JOINTS, PARAMS,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub mod adapt;
pub mod qp;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sym(rng: &mut impl Rng, half: f64) -> f64 {
    rng.random_range(-half..half)
}

fn pose(rng: &mut impl Rng, reach: f64) -> PoseParams {
    PoseParams {
        translation: [sym(rng, reach), sym(rng, reach), sym(rng, reach)],
        rotation: [sym(rng, PI), sym(rng, PI), sym(rng, PI)],
    }
}

pub fn random_model(rng: &mut impl Rng) -> SerialChainModel {
    let joint_kinds = std::array::from_fn(|_| {
        if rng.random_bool(0.25) {
            JointKind::Prismatic
        } else {
            JointKind::Revolute
        }
    });
    let dh = std::array::from_fn(|_| DhRow {
        theta: sym(rng, PI),
        d: sym(rng, 0.3),
        a: sym(rng, 0.3),
        alpha: sym(rng, PI),
    });
    SerialChainModel {
        joint_kinds,
        dh,
        base: pose(rng, 0.5),
        effector: pose(rng, 0.1),
        limits: [JointLimits {
            min: -PI,
            max: PI,
            max_velocity: 1.0,
        }; JOINTS],
    }
}

pub fn random_joints(rng: &mut impl Rng) -> JointVector {
    JointVector::from_fn(|_, _| sym(rng, 1.5))
}

pub fn random_offset(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(sym(rng, 0.1), sym(rng, 0.1), sym(rng, 0.1))
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, eps: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += eps;
        xm[j] -= eps;
        out.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * eps)));
    }
    out
}

/// Entry-wise `|analytic − fd| / (1 + |analytic|)`, maximized.
pub fn rel_err(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), fd.shape());
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, f)| (a - f).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

/// Two random branches with joint values and parameters.
#[derive(Clone, Debug)]
pub struct SystemSample {
    pub models: [SerialChainModel; 2],
    pub q: [JointVector; 2],
    pub a: [ParamVector; 2],
}

impl SystemSample {
    pub fn random(rng: &mut impl Rng) -> Self {
        let models = [random_model(rng), random_model(rng)];
        let a = [models[0].parameters(), models[1].parameters()];
        Self {
            q: [random_joints(rng), random_joints(rng)],
            models,
            a,
        }
    }

    pub fn joints(&self) -> DVector<f64> {
        DVector::from_iterator(2 * JOINTS, self.q[0].iter().chain(self.q[1].iter()).copied())
    }

    pub fn params(&self) -> DVector<f64> {
        DVector::from_iterator(2 * PARAMS, self.a[0].iter().chain(self.a[1].iter()).copied())
    }

    pub fn with_joints(&self, q: &DVector<f64>) -> Self {
        let mut s = self.clone();
        s.q[0] = JointVector::from_column_slice(&q.as_slice()[..JOINTS]);
        s.q[1] = JointVector::from_column_slice(&q.as_slice()[JOINTS..]);
        s
    }

    pub fn with_params(&self, a: &DVector<f64>) -> Self {
        let mut s = self.clone();
        s.a[0] = ParamVector::from_column_slice(&a.as_slice()[..PARAMS]);
        s.a[1] = ParamVector::from_column_slice(&a.as_slice()[PARAMS..]);
        s
    }

    pub fn state(&self, branch: usize, frame: Frame, offset: &Vector3<f64>) -> KinematicState {
        frame_kinematics(&self.models[branch], &self.q[branch], &self.a[branch], frame, offset).unwrap()
    }

    pub fn effector(&self, branch: usize) -> KinematicState {
        self.state(branch, Frame::Effector, &Vector3::zeros())
    }

    /// Tool tip (branch 0) and camera (branch 1) over the stacked parameters.
    pub fn param_frames(&self) -> (TrackedPoint, TrackedFrame) {
        (
            TrackedFrame::param_space(&self.effector(0), 0).point(),
            TrackedFrame::param_space(&self.effector(1), 1),
        )
    }

    /// Tool tip and camera over the stacked joint velocities.
    pub fn joint_frames(&self) -> (TrackedPoint, TrackedFrame) {
        (
            TrackedFrame::joint_space(&self.effector(0), 0).point(),
            TrackedFrame::joint_space(&self.effector(1), 1),
        )
    }

    /// Position of the effector via homogeneous matrices.
    pub fn position(&self, branch: usize, frame: Frame, offset: &Vector3<f64>) -> Vector3<f64> {
        let m = homogeneous(&self.state(branch, frame, &Vector3::zeros()).pose);
        m.fixed_view::<3, 3>(0, 0) * offset + m.fixed_view::<3, 1>(0, 3)
    }

    pub fn rotation_matrix(&self, branch: usize) -> nalgebra::Matrix3<f64> {
        homogeneous(&self.effector(branch).pose).fixed_view::<3, 3>(0, 0).into()
    }

    /// Camera-to-tip direction in the optical frame, computed with rotation matrices.
    pub fn optical_direction(&self) -> Vector3<f64> {
        let h =
            self.position(0, Frame::Effector, &Vector3::zeros()) - self.position(1, Frame::Effector, &Vector3::zeros());
        self.rotation_matrix(1).transpose() * h.normalize()
    }

    pub fn sight_length(&self) -> f64 {
        (self.position(0, Frame::Effector, &Vector3::zeros()) - self.position(1, Frame::Effector, &Vector3::zeros()))
            .norm()
    }
}

/// Pads a 3-vector into a `vec₄` column.
pub fn v4(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_vec(vec![0.0, v.x, v.y, v.z])
}

pub mod suites {
    //! Seeded suites returning the worst error seen.

    use super::*;
    use fovctl::adaptive::{adaptation_jacobian, line_direction_param_jacobian};
    use fovctl::constraints::{
        focal_band_rows, fov_cone_margin, point_line_distance, point_plane_row, point_point_distance, Plane,
    };
    use fovctl::dq::{PluckerLine, Quaternion};

    fn random_frame(rng: &mut impl Rng) -> Frame {
        match rng.random_range(0..10) {
            0 => Frame::Base,
            9 => Frame::Effector,
            _ => Frame::Link(rng.random_range(1..=JOINTS)),
        }
    }

    fn non_degenerate(rng: &mut impl Rng) -> SystemSample {
        loop {
            let s = SystemSample::random(rng);
            if s.sight_length() > 0.05 {
                return s;
            }
        }
    }

    /// `J_r,q`, `J_t,q`, `J_r,â`, `J_t,â` at random frames with random offsets.
    pub fn kinematics(seed: u64, trials: usize) -> f64 {
        let mut rng = rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let s = SystemSample::random(&mut rng);
            let frame = random_frame(&mut rng);
            let offset = random_offset(&mut rng);
            let st = s.state(0, frame, &offset);
            let rt = |st: &KinematicState| {
                DVector::from_iterator(
                    8,
                    st.rotation.vec4().iter().chain(st.translation.vec4().iter()).copied(),
                )
            };
            let q0 = DVector::from_column_slice(s.q[0].as_slice());
            let a0 = DVector::from_column_slice(s.a[0].as_slice());
            let fq = fd_jacobian(
                |q| {
                    let mut t = s.clone();
                    t.q[0] = JointVector::from_column_slice(q.as_slice());
                    rt(&t.state(0, frame, &offset))
                },
                &q0,
                FD_STEP,
            );
            let fa = fd_jacobian(
                |a| {
                    let mut t = s.clone();
                    t.a[0] = ParamVector::from_column_slice(a.as_slice());
                    rt(&t.state(0, frame, &offset))
                },
                &a0,
                FD_STEP,
            );
            let mut an_q = DMatrix::zeros(8, JOINTS);
            an_q.rows_mut(0, 4).copy_from(&st.jr_q);
            an_q.rows_mut(4, 4).copy_from(&st.jt_q);
            let mut an_a = DMatrix::zeros(8, PARAMS);
            an_a.rows_mut(0, 4).copy_from(&st.jr_a);
            an_a.rows_mut(4, 4).copy_from(&st.jt_a);
            worst = worst.max(rel_err(&an_q, &fq)).max(rel_err(&an_a, &fa));
        }
        worst
    }

    /// Sight-line direction Jacobian over the stacked parameters.
    pub fn line_direction(seed: u64, trials: usize) -> f64 {
        let mut rng = rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let s = non_degenerate(&mut rng);
            let (tip, cam) = s.param_frames();
            let an = line_direction_param_jacobian(&tip, &cam).unwrap();
            let fd = fd_jacobian(
                |a| {
                    let t = s.with_params(a);
                    let h = t.position(0, Frame::Effector, &Vector3::zeros())
                        - t.position(1, Frame::Effector, &Vector3::zeros());
                    v4(&h.normalize())
                },
                &s.params(),
                FD_STEP,
            );
            worst = worst.max(rel_err(&an, &fd));
        }
        worst
    }

    /// Measurement-model Jacobian `J_ŷ,â` over the stacked parameters.
    pub fn measurement(seed: u64, trials: usize) -> f64 {
        let mut rng = rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let s = non_degenerate(&mut rng);
            let (tip, cam) = s.param_frames();
            let an = adaptation_jacobian(&tip, &cam).unwrap();
            let fd = fd_jacobian(|a| v4(&s.with_params(a).optical_direction()), &s.params(), FD_STEP);
            worst = worst.max(rel_err(&an, &fd));
        }
        worst
    }

    /// Gradient of a scalar constraint function against central differences over `x`.
    fn scalar_check(grad: &DVector<f64>, f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> f64 {
        let fd = fd_jacobian(|x| DVector::from_element(1, f(x)), x, FD_STEP);
        rel_err(&DMatrix::from_row_slice(1, grad.len(), grad.as_slice()), &fd)
    }

    /// Every task-space constraint gradient over `q̇`, and the cone gradient over `â̇`.
    pub fn constraints(seed: u64, trials: usize) -> f64 {
        let mut rng = rng(seed);
        let mut worst = 0.0f64;
        let theta: f64 = 0.3;
        for _ in 0..trials {
            let s = non_degenerate(&mut rng);
            let q = s.joints();
            let fa = random_frame(&mut rng);
            let fb = random_frame(&mut rng);
            let oa = random_offset(&mut rng);
            let ob = random_offset(&mut rng);
            let pa = TrackedFrame::joint_space(&s.state(0, fa, &oa), 0).point();
            let pb = TrackedFrame::joint_space(&s.state(1, fb, &ob), 1).point();

            if let Some((_, grad)) = point_point_distance(&pa, &pb) {
                worst = worst.max(scalar_check(
                    &grad,
                    |q| {
                        let t = s.with_joints(q);
                        (t.position(0, fa, &oa) - t.position(1, fb, &ob)).norm()
                    },
                    &q,
                ));
            }

            let normal = Vector3::new(sym(&mut rng, 1.0), sym(&mut rng, 1.0), sym(&mut rng, 1.0)).normalize();
            let plane = Plane {
                normal: normal.into(),
                offset: sym(&mut rng, 0.2),
            };
            let row = point_plane_row(&pa, &plane, 0.0, 1.0);
            worst = worst.max(scalar_check(
                &-row.coefficients,
                |q| normal.dot(&s.with_joints(q).position(0, fa, &oa)) - plane.offset,
                &q,
            ));

            let p0 = Vector3::new(sym(&mut rng, 0.3), sym(&mut rng, 0.3), sym(&mut rng, 0.3));
            let dir = Vector3::new(sym(&mut rng, 1.0), sym(&mut rng, 1.0), sym(&mut rng, 1.0)).normalize();
            let line = PluckerLine::through(&Quaternion::from_vec3(&p0), &Quaternion::from_vec3(&dir)).unwrap();
            if let Some((_, grad)) = point_line_distance(&pa, &line) {
                worst = worst.max(scalar_check(
                    &grad,
                    |q| {
                        let w = s.with_joints(q).position(0, fa, &oa) - p0;
                        (w - dir * w.dot(&dir)).norm()
                    },
                    &q,
                ));
            }

            let cone = |t: &SystemSample| {
                let axis = -t.rotation_matrix(1).column(2).into_owned();
                let h = t.position(0, Frame::Effector, &Vector3::zeros())
                    - t.position(1, Frame::Effector, &Vector3::zeros());
                axis.dot(&h.normalize()) - theta.cos()
            };
            let (tip, cam) = s.joint_frames();
            let (_, grad) = fov_cone_margin(&cam, &tip, theta).unwrap();
            worst = worst.max(scalar_check(&grad, |q| cone(&s.with_joints(q)), &q));
            let (ptip, pcam) = s.param_frames();
            let (_, grad) = fov_cone_margin(&pcam, &ptip, theta).unwrap();
            worst = worst.max(scalar_check(&grad, |a| cone(&s.with_params(a)), &s.params()));

            let [near, far] = focal_band_rows(&cam, &tip, 0.4, 0.005, 1.0).unwrap();
            worst = worst.max(scalar_check(
                &-near.coefficients,
                |q| s.with_joints(q).sight_length(),
                &q,
            ));
            worst = worst.max(scalar_check(&far.coefficients, |q| s.with_joints(q).sight_length(), &q));
        }
        worst
    }

    /// Hamilton product expanded over the 16 basis products `e_i e_j`.
    pub fn basis_product(a: &Quaternion, b: &Quaternion) -> Quaternion {
        // e_i e_j = sign · e_k, indices over (1, î, ĵ, k̂).
        const TABLE: [[(f64, usize); 4]; 4] = [
            [(1.0, 0), (1.0, 1), (1.0, 2), (1.0, 3)],
            [(1.0, 1), (-1.0, 0), (1.0, 3), (-1.0, 2)],
            [(1.0, 2), (-1.0, 3), (-1.0, 0), (1.0, 1)],
            [(1.0, 3), (1.0, 2), (-1.0, 1), (-1.0, 0)],
        ];
        let (x, y) = (a.vec4(), b.vec4());
        let mut out = nalgebra::Vector4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                let (sign, k) = TABLE[i][j];
                out[k] += sign * x[i] * y[j];
            }
        }
        Quaternion::from_vec4(&out)
    }

    fn random_quat(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(sym(rng, 2.0), sym(rng, 2.0), sym(rng, 2.0), sym(rng, 2.0))
    }

    fn random_pure(rng: &mut impl Rng) -> Quaternion {
        Quaternion::pure(sym(rng, 2.0), sym(rng, 2.0), sym(rng, 2.0))
    }

    fn random_unit(rng: &mut impl Rng) -> Quaternion {
        loop {
            let q = random_quat(rng);
            if q.norm() > 1e-3 {
                return q.normalized();
            }
        }
    }

    /// Hamilton factorization, adjoint and pose compose/decompose identities.
    pub fn algebra(seed: u64, cases: usize) -> f64 {
        use fovctl::dq::{adjoint, pose_compose, pose_decompose, DualQuaternion};
        let mut rng = rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (a, b) = (random_quat(&mut rng), random_quat(&mut rng));
            let ab = basis_product(&a, &b).vec4();
            worst = worst
                .max((a.hamilton_plus() * b.vec4() - ab).amax())
                .max((b.hamilton_minus() * a.vec4() - ab).amax());

            let (r, p) = (random_unit(&mut rng), random_pure(&mut rng));
            let q = adjoint(&r, &p).unwrap();
            let m = r.hamilton_plus() * r.conj().hamilton_minus() * p.vec4();
            worst = worst.max((q.vec4() - m).amax()).max((q.norm() - p.norm()).abs());

            let x = DualQuaternion::from_rotation_translation(r, random_pure(&mut rng));
            let y = DualQuaternion::from_rotation_translation(random_unit(&mut rng), random_pure(&mut rng));
            let (r2, t2) = pose_decompose(&x).unwrap();
            let back = DualQuaternion::from_rotation_translation(r2, t2);
            worst = worst
                .max((back.primary - x.primary).norm())
                .max((back.dual - x.dual).norm());
            let xy = pose_compose(&x, &y).unwrap();
            worst = worst.max((homogeneous(&xy) - homogeneous(&x) * homogeneous(&y)).amax());
        }
        worst
    }
}
