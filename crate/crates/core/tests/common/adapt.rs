//! Finite-difference probes of adaptation outputs taken from a scenario run.

use fovctl::adaptive::projector_rows;
use fovctl::constraints::TrackedFrame;
use fovctl::dq::Quaternion;
use fovctl::kinematics::{forward_kinematics, KinematicState, ParamVector, SystemParams, PARAMS};
use fovctl::scenario::{AdaptationDiagnostics, ScenarioConfig, Simulation};
use fovctl::task::{TaskErrors, TaskTargets};
use nalgebra::DVector;

/// One adaptation solve with the state it was computed at.
pub struct Sample {
    pub diag: AdaptationDiagnostics,
    pub targets: TaskTargets,
}

/// Optimal adaptation solves of the first `ticks` ticks of a run.
pub fn collect(cfg: &ScenarioConfig, ticks: usize) -> (Simulation, Vec<Sample>) {
    let mut sim = Simulation::new(cfg).unwrap();
    let dt = cfg.trajectory.dt();
    let mut out = Vec::new();
    for _ in 0..ticks.min(cfg.trajectory.ticks()) {
        let time = sim.tick_index() as f64 * dt;
        let targets = sim.targets(time);
        let report = sim.step().unwrap();
        if let Some(diag) = report.adaptation {
            if diag.status == fovctl::qp::QpStatus::Optimal {
                out.push(Sample { diag, targets });
            }
        }
    }
    (sim, out)
}

fn branch(a: &SystemParams, b: usize) -> ParamVector {
    ParamVector::from_column_slice(&a.as_slice()[b * PARAMS..(b + 1) * PARAMS])
}

/// Both effector states at `â + ε u`.
pub fn states_at(sim: &Simulation, s: &Sample, eps: f64) -> [KinematicState; 2] {
    states_along(sim, s, &s.diag.u, eps)
}

/// Both effector states at `â + ε d`.
pub fn states_along(sim: &Simulation, s: &Sample, d: &SystemParams, eps: f64) -> [KinematicState; 2] {
    let a = s.diag.params + d * eps;
    std::array::from_fn(|b| forward_kinematics(&sim.models()[b], &s.diag.joints[b], &branch(&a, b)).unwrap())
}

/// `‖t̂₁(â + ε u) − t̂₁(â)‖`
pub fn tip_displacement(sim: &Simulation, s: &Sample, eps: f64) -> f64 {
    (states_at(sim, s, eps)[0].translation - states_at(sim, s, 0.0)[0].translation).norm()
}

/// `⟨l̂, 2 ṙ̂₂ r̂₂*⟩` with `ṙ̂₂` from central differences along `u`.
pub fn roll_rate(sim: &Simulation, s: &Sample) -> f64 {
    let h = 1e-6;
    let [tool, cam] = states_at(sim, s, 0.0);
    let r_dot = (states_at(sim, s, h)[1].rotation - states_at(sim, s, -h)[1].rotation) * (0.5 / h);
    let omega = r_dot * cam.rotation.conj() * 2.0;
    let l: Quaternion = (tool.translation - cam.translation).normalized();
    l.imag().dot(&omega.imag())
}

/// Task Lyapunov function evaluated by forward kinematics at `â + ε u`.
pub fn lyapunov_at(sim: &Simulation, s: &Sample, eps: f64) -> f64 {
    let [tool, cam] = states_at(sim, s, eps);
    TaskErrors::new(&tool, &cam, &s.targets).lyapunov(&sim.config().gains.task)
}

/// Log-log slope of the tip displacement between `ε = 1e-3` and `ε = 1e-4`
/// along the unit projection of `d` onto `null(N_â)` at the sample's state.
///
/// Estimator outputs rarely carry a tool-parameter component (the measurement
/// sees the tool only through `t̂₁`, which `N_â` freezes), so their own
/// displacement is usually zero up to rounding and has no measurable slope.
pub fn null_space_slope(sim: &Simulation, s: &Sample, d: &DVector<f64>) -> f64 {
    let [tool, cam] = states_at(sim, s, 0.0);
    let n = projector_rows(
        &TrackedFrame::param_space(&tool, 0).point(),
        &TrackedFrame::param_space(&cam, 1),
    )
    .unwrap();
    let coeff = (&n * n.transpose()).svd(true, true).solve(&(&n * d), 1e-12).unwrap();
    let p = d - n.transpose() * coeff;
    let p = SystemParams::from_column_slice((&p / p.norm()).as_slice());
    let base = states_along(sim, s, &p, 0.0)[0].translation;
    let disp = |eps| (states_along(sim, s, &p, eps)[0].translation - base).norm();
    (disp(1e-3) / disp(1e-4)).log10()
}
