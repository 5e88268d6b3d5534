mod common;

use common::{random_joints, random_model, rng};
use fovctl::dq::Quaternion;
use fovctl::kinematics::{forward_kinematics, layout, JointKind, JointVector, SerialChainModel, JOINTS};
use nalgebra::{Matrix4, Rotation3, Vector3};

fn rot(axis: Vector3<f64>, angle: f64) -> Matrix4<f64> {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).to_homogeneous()
}

fn trans(v: Vector3<f64>) -> Matrix4<f64> {
    Matrix4::new_translation(&v)
}

fn pose_matrix(p: &fovctl::kinematics::PoseParams) -> Matrix4<f64> {
    let [x, y, z] = p.translation;
    let [a, b, c] = p.rotation;
    trans(Vector3::new(x, y, z)) * rot(Vector3::x(), a) * rot(Vector3::y(), b) * rot(Vector3::z(), c)
}

/// Frames before each joint (index 0 = after the base) and the effector.
fn matrix_chain(model: &SerialChainModel, q: &JointVector) -> (Vec<Matrix4<f64>>, Matrix4<f64>) {
    let mut m = pose_matrix(&model.base);
    let mut before = Vec::with_capacity(JOINTS);
    for k in 0..JOINTS {
        before.push(m);
        let dh = model.dh[k];
        let (theta, d) = match model.joint_kinds[k] {
            JointKind::Revolute => (dh.theta + q[k], dh.d),
            JointKind::Prismatic => (dh.theta, dh.d + q[k]),
        };
        m = m
            * rot(Vector3::z(), theta)
            * trans(Vector3::new(0.0, 0.0, d))
            * trans(Vector3::new(dh.a, 0.0, 0.0))
            * rot(Vector3::x(), dh.alpha);
    }
    (before, m * pose_matrix(&model.effector))
}

#[test]
fn translation_matches_homogeneous_chain() {
    let mut rng = rng(21);
    for _ in 0..200 {
        let model = random_model(&mut rng);
        let q = random_joints(&mut rng);
        let s = forward_kinematics(&model, &q, &model.parameters()).unwrap();
        let (_, m) = matrix_chain(&model, &q);
        let t = s.translation.vec3().unwrap();
        assert!((t - m.fixed_view::<3, 1>(0, 3)).amax() < 1e-10);
        let r = fovctl::kinematics::homogeneous(&s.pose);
        assert!((r.fixed_view::<3, 3>(0, 0) - m.fixed_view::<3, 3>(0, 0)).amax() < 1e-10);
    }
}

#[test]
fn joint_jacobians_match_screw_axes() {
    let mut rng = rng(22);
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let q = random_joints(&mut rng);
        let s = forward_kinematics(&model, &q, &model.parameters()).unwrap();
        let (before, end) = matrix_chain(&model, &q);
        let p = end.fixed_view::<3, 1>(0, 3).into_owned();
        for (k, frame) in before.iter().enumerate() {
            let z = frame.fixed_view::<3, 1>(0, 2).into_owned();
            let o = frame.fixed_view::<3, 1>(0, 3).into_owned();
            let (v, w) = match model.joint_kinds[k] {
                JointKind::Revolute => (z.cross(&(p - o)), z),
                JointKind::Prismatic => (z, Vector3::zeros()),
            };
            let jt = s.jt_q.column(k);
            assert!(jt[0].abs() < 1e-12);
            assert!((jt.fixed_rows::<3>(1) - v).amax() < 1e-10, "joint {k}");
            let jr = Quaternion::from_vec3(&w) * s.rotation * 0.5;
            assert!((s.jr_q.column(k) - jr.vec4()).amax() < 1e-10, "joint {k}");
        }
    }
}

#[test]
fn rotation_jacobian_is_tangent_to_unit_sphere() {
    let mut rng = rng(23);
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let q = random_joints(&mut rng);
        let s = forward_kinematics(&model, &q, &model.parameters()).unwrap();
        let r = s.rotation.vec4();
        assert!((r.transpose() * s.jr_q).amax() < 1e-10);
        assert!((r.transpose() * s.jr_a).amax() < 1e-10);
    }
}

#[test]
fn base_translation_shifts_effector_exactly() {
    let mut rng = rng(24);
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let q = random_joints(&mut rng);
        let a = model.parameters();
        let delta = common::random_offset(&mut rng);
        let mut b = a;
        for i in 0..3 {
            b[layout::BASE_TRANSLATION + i] += delta[i];
        }
        let t0 = forward_kinematics(&model, &q, &a).unwrap().translation.imag();
        let t1 = forward_kinematics(&model, &q, &b).unwrap().translation.imag();
        assert!((t1 - t0 - delta).amax() < 1e-12);
    }
}
