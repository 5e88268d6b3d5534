//! Closed-loop simulation: true plant, estimated-model controller and estimator.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::adaptive::{adapt_tick, estimated_measurement, AdaptationGains, AdaptationInput, TaskParamJacobians};
use crate::camera::{off_axis_angle, project_point, to_optical_frame, PixelSensor, Projection};
use crate::constraints::{
    box_rows, focal_band_rows, fov_cone_margin, fov_cone_row, joint_limit_rows, point_line_row, point_plane_row,
    point_point_row, ConstraintKind, ConstraintSet, Surface, TrackedFrame, TrackedPoint, Zone,
};
use crate::dq::{DualQuaternion, Quaternion};
use crate::error::{Error, Result};
use crate::kinematics::{
    frame_kinematics, param_class, JointVector, KinematicState, ParamClass, ParamVector, SerialChainModel,
    SystemParams, JOINTS, PARAMS, SYSTEM_PARAMS,
};
use crate::qp::QpStatus;
use crate::task::{control_tick, TaskErrors, TaskTargets};

use super::config::{circle_trajectory, ScenarioConfig};
use super::init::{inverse_kinematics, look_at, params_of, perturb, rotation_between, PoseTarget};
use super::trace::{ParamError, Summary, TraceRecord, TRACE_FORMAT_VERSION};

/// Margin tolerance used when counting the estimated cone as kept.
pub const ESTIMATED_MARGIN_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Space {
    Joint,
    Param,
}

/// Frames of both branches evaluated at one `(q, a)`.
struct Snapshot {
    tool: KinematicState,
    camera: KinematicState,
    env: [Vec<KinematicState>; 2],
    inter: [Vec<KinematicState>; 2],
}

impl Snapshot {
    fn frame(state: &KinematicState, branch: usize, space: Space) -> TrackedFrame {
        match space {
            Space::Joint => TrackedFrame::joint_space(state, branch),
            Space::Param => TrackedFrame::param_space(state, branch),
        }
    }

    fn tip(&self, space: Space) -> TrackedPoint {
        Self::frame(&self.tool, 0, space).point()
    }

    fn optical(&self, space: Space) -> TrackedFrame {
        Self::frame(&self.camera, 1, space)
    }
}

/// Diagnostics of one adaptation solve.
#[derive(Clone, Debug)]
pub struct AdaptationDiagnostics {
    /// Joint values the measurement was taken at.
    pub joints: [JointVector; 2],
    /// Estimate before the update.
    pub params: SystemParams,
    pub u: SystemParams,
    pub status: QpStatus,
    /// `‖N_â u_â‖`
    pub projector_residual: f64,
    /// `x̃ᵀ J_x,â u_â`
    pub lyapunov_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TickReport {
    pub record: TraceRecord,
    pub adaptation: Option<AdaptationDiagnostics>,
}

/// Box limits and rate limits on the estimate.
#[derive(Clone, Copy, Debug)]
pub struct ParamBounds {
    pub lower: SystemParams,
    pub upper: SystemParams,
    pub rate: SystemParams,
}

impl ParamBounds {
    pub fn new(cfg: &ScenarioConfig, a_nominal: &SystemParams) -> Self {
        let ac = &cfg.gains.adaptation;
        let mut b = Self {
            lower: SystemParams::zeros(),
            upper: SystemParams::zeros(),
            rate: SystemParams::zeros(),
        };
        for i in 0..SYSTEM_PARAMS {
            let (half, rate) = match param_class(i % PARAMS) {
                ParamClass::Length => (
                    (ac.length_bound_fraction * a_nominal[i].abs()).max(ac.length_bound_floor),
                    ac.length_rate,
                ),
                ParamClass::Angle => (ac.angle_bound, ac.angle_rate),
            };
            b.lower[i] = a_nominal[i] - half;
            b.upper[i] = a_nominal[i] + half;
            b.rate[i] = rate;
        }
        b
    }

    pub fn rows(&self, a_hat: &SystemParams, eta: f64) -> Vec<crate::constraints::ConstraintRow> {
        box_rows(
            a_hat.as_slice(),
            self.lower.as_slice(),
            self.upper.as_slice(),
            self.rate.as_slice(),
            eta,
            0,
            SYSTEM_PARAMS,
            ConstraintKind::ParamBox,
        )
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    models: [SerialChainModel; 2],
    a_true: [ParamVector; 2],
    a_nominal: SystemParams,
    a_hat: SystemParams,
    q: [JointVector; 2],
    t2d: Quaternion,
    sensor: PixelSensor,
    rng: ChaCha8Rng,
    bounds: ParamBounds,
    tick: usize,
    failures: usize,
    warm_control: Vec<usize>,
    warm_adapt: Vec<usize>,
}

pub(crate) fn stack(a: &ParamVector, b: &ParamVector) -> SystemParams {
    SystemParams::from_iterator(a.iter().chain(b.iter()).copied())
}

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::MaxIterations => "max-iter",
    }
}

pub fn params_hash(a: &SystemParams) -> String {
    let mut h = Sha256::new();
    for v in a.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl Simulation {
    /// Samples the true plant, places both arms and checks that every
    /// constraint holds under both models.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let models = [cfg.robots.tool.model.clone(), cfg.robots.camera.model.clone()];
        let nominal = [models[0].parameters(), models[1].parameters()];
        let a_true = [
            perturb(&nominal[0], &cfg.robots.tool.perturbation, &mut rng),
            perturb(&nominal[1], &cfg.robots.camera.perturbation, &mut rng),
        ];
        let a_nominal = stack(&nominal[0], &nominal[1]);

        let bounds = ParamBounds::new(cfg, &a_nominal);

        let sensor = PixelSensor::new(cfg.camera.intrinsics, cfg.noise.pixel_sigma, cfg.noise.quantize)?;
        let mut sim = Self {
            cfg: cfg.clone(),
            models,
            a_true,
            a_nominal,
            a_hat: a_nominal,
            q: [
                JointVector::from(cfg.robots.tool.home),
                JointVector::from(cfg.robots.camera.home),
            ],
            t2d: Quaternion::ZERO,
            sensor,
            rng,
            bounds,
            tick: 0,
            failures: 0,
            warm_control: Vec::new(),
            warm_adapt: Vec::new(),
        };
        sim.place_arms()?;
        sim.check_feasible()?;
        Ok(sim)
    }

    fn estimated(&self, branch: usize) -> ParamVector {
        params_of(&self.a_hat, branch)
    }

    /// Puts the estimated tip on the trajectory start and aims the camera so
    /// that its axis bisects the true and estimated sight lines.
    fn place_arms(&mut self) -> Result<()> {
        let (t1d, r1d) = circle_trajectory(0.0, &self.cfg.trajectory);
        let a1 = self.estimated(0);
        let a2 = self.estimated(1);
        self.q[0] = inverse_kinematics(
            &self.models[0],
            &a1,
            &self.q[0],
            &PoseTarget {
                rotation: r1d,
                translation: t1d,
            },
        )?;
        let tip_est = crate::kinematics::forward_kinematics(&self.models[0], &self.q[0], &a1)?.translation;
        let tip_true = crate::kinematics::forward_kinematics(&self.models[0], &self.q[0], &self.a_true[0])?.translation;

        let home_cam = crate::kinematics::forward_kinematics(&self.models[1], &self.q[1], &a2)?.translation;
        let away = (home_cam - tip_est).imag().normalize();
        let position = Quaternion::from_vec3(&(tip_est.imag() + away * self.cfg.camera.d_image));
        let mut rotation = look_at(&-away);
        for _ in 0..6 {
            self.q[1] = inverse_kinematics(
                &self.models[1],
                &a2,
                &self.q[1],
                &PoseTarget {
                    rotation,
                    translation: position,
                },
            )?;
            let est = crate::kinematics::forward_kinematics(&self.models[1], &self.q[1], &a2)?;
            let tru = crate::kinematics::forward_kinematics(&self.models[1], &self.q[1], &self.a_true[1])?;
            let y_hat = to_optical_frame(&est.rotation, &(tip_est - est.translation).normalized())?;
            let y = to_optical_frame(&tru.rotation, &(tip_true - tru.translation).normalized())?;
            let bisector = (y_hat.imag() + y.imag()).normalize();
            let correction = rotation_between(&-Vector3::z(), &bisector);
            if correction.rotation_angle() < 1e-10 {
                break;
            }
            rotation = (rotation * correction).normalized();
        }
        self.t2d = crate::kinematics::forward_kinematics(&self.models[1], &self.q[1], &a2)?.translation;
        Ok(())
    }

    fn snapshot(&self, a: &[ParamVector; 2]) -> Result<Snapshot> {
        let geom = &self.cfg.constraints.geometry;
        let eval = |branch: usize, frame, offset: &[f64; 3]| {
            frame_kinematics(
                &self.models[branch],
                &self.q[branch],
                &a[branch],
                frame,
                &Vector3::from(*offset),
            )
        };
        let mut env: [Vec<KinematicState>; 2] = Default::default();
        let mut inter: [Vec<KinematicState>; 2] = Default::default();
        for b in 0..2 {
            for p in &geom.environment_points[b] {
                env[b].push(eval(b, p.attachment.frame, &p.attachment.offset)?);
            }
            for p in &geom.inter_robot_points[b] {
                inter[b].push(eval(b, p.frame, &p.offset)?);
            }
        }
        Ok(Snapshot {
            tool: eval(0, crate::kinematics::Frame::Effector, &[0.0; 3])?,
            camera: eval(1, crate::kinematics::Frame::Effector, &[0.0; 3])?,
            env,
            inter,
        })
    }

    fn task_space_rows(&self, snap: &Snapshot, space: Space) -> Result<ConstraintSet> {
        let (collision, fov) = match space {
            Space::Joint => (true, true),
            Space::Param => (
                self.cfg.gains.adaptation.mirror_collision,
                self.cfg.gains.adaptation.mirror_fov,
            ),
        };
        let geom = &self.cfg.constraints.geometry;
        let cam = &self.cfg.camera;
        let eta = geom.eta;
        let axis = geom.workspace.axis()?;
        let mut set = ConstraintSet::default();
        for b in (0..2).filter(|_| collision) {
            for (p, state) in geom.environment_points[b].iter().zip(&snap.env[b]) {
                let point = Snapshot::frame(state, b, space).point();
                match p.surface {
                    Surface::TopPlane => {
                        set.push(point_plane_row(&point, &geom.workspace.top, geom.plane_clearance, eta))
                    }
                    Surface::CylinderWall => {
                        if let Some(row) =
                            point_line_row(&point, &axis, geom.workspace.radius + geom.wall_clearance, eta)
                        {
                            set.push(row);
                        }
                    }
                }
            }
        }
        for (s0, s1) in snap.inter[0].iter().zip(&snap.inter[1]).filter(|_| collision) {
            let p0 = Snapshot::frame(s0, 0, space).point();
            let p1 = Snapshot::frame(s1, 1, space).point();
            if let Some(row) = point_point_row(&p0, &p1, geom.inter_robot_distance, eta, Zone::KeepOut) {
                set.push(row);
            }
        }
        let tip = snap.tip(space);
        let optical = snap.optical(space);
        if fov {
            set.push(fov_cone_row(&optical, &tip, cam.theta_safe, eta)?);
        }
        if space == Space::Joint {
            set.extend(focal_band_rows(&optical, &tip, cam.d_image, cam.focal_band, eta)?);
        }
        Ok(set)
    }

    fn control_rows(&self, snap: &Snapshot) -> Result<ConstraintSet> {
        let mut set = ConstraintSet::default();
        let eta_j = self.cfg.gains.joint_limit_eta;
        for b in 0..2 {
            set.extend(joint_limit_rows(&self.models[b], &self.q[b], eta_j, b));
        }
        let task = self.task_space_rows(snap, Space::Joint)?;
        set.extend(task.inequalities);
        Ok(set)
    }

    fn adaptation_rows(&self, snap: &Snapshot) -> Result<ConstraintSet> {
        let ac = &self.cfg.gains.adaptation;
        let mut set = ConstraintSet::default();
        set.extend(self.bounds.rows(&self.a_hat, ac.box_eta));
        // Mirrored rows only keep the estimate from eroding a margin; a
        // margin the control loop overshot is not repaired through â.
        set.extend(
            self.task_space_rows(snap, Space::Param)?
                .inequalities
                .into_iter()
                .map(|mut r| {
                    r.bound = r.bound.max(0.0);
                    r
                }),
        );
        Ok(set)
    }

    fn check_feasible(&self) -> Result<()> {
        let a_hat = [self.estimated(0), self.estimated(1)];
        let snap = self.snapshot(&a_hat)?;
        let rows = self.control_rows(&snap)?;
        let mut violated: Vec<String> = rows
            .inequalities
            .iter()
            .filter(|r| r.bound < 0.0)
            .map(|r| format!("{:?} (bound {:.3e})", r.kind, r.bound))
            .collect();
        let truth = self.snapshot(&self.a_true)?;
        let (g_true, _) = fov_cone_margin(
            &truth.optical(Space::Joint),
            &truth.tip(Space::Joint),
            self.cfg.camera.theta_safe,
        )?;
        if g_true < 0.0 {
            violated.push(format!("true FoV cone (margin {g_true:.3e})"));
        }
        if violated.is_empty() {
            Ok(())
        } else {
            Err(Error::InfeasibleInit(format!(
                "initial configuration violates: {}",
                violated.join(", ")
            )))
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn models(&self) -> &[SerialChainModel; 2] {
        &self.models
    }

    pub fn joints(&self) -> &[JointVector; 2] {
        &self.q
    }

    pub fn estimated_params(&self) -> &SystemParams {
        &self.a_hat
    }

    pub fn true_params(&self) -> SystemParams {
        stack(&self.a_true[0], &self.a_true[1])
    }

    pub fn nominal_params(&self) -> &SystemParams {
        &self.a_nominal
    }

    pub fn tick_index(&self) -> usize {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.cfg.trajectory.ticks()
    }

    pub fn targets(&self, t: f64) -> TaskTargets {
        let (t1d, r1d) = circle_trajectory(t, &self.cfg.trajectory);
        TaskTargets {
            r1d,
            t1d,
            t2d: self.t2d,
        }
    }

    fn count_failure(&mut self, status: QpStatus) -> Result<()> {
        if status != QpStatus::Optimal {
            self.failures += 1;
            if self.failures > self.cfg.constraints.qp_failure_budget {
                return Err(Error::QpBudgetExceeded {
                    failures: self.failures,
                    budget: self.cfg.constraints.qp_failure_budget,
                });
            }
        }
        Ok(())
    }

    /// Advances one control period.
    pub fn step(&mut self) -> Result<TickReport> {
        let dt = self.cfg.trajectory.dt();
        let time = self.tick as f64 * dt;
        let cam_cfg = self.cfg.camera;
        let a_hat = [self.estimated(0), self.estimated(1)];
        let est = self.snapshot(&a_hat)?;
        let truth = [
            crate::kinematics::forward_kinematics(&self.models[0], &self.q[0], &self.a_true[0])?,
            crate::kinematics::forward_kinematics(&self.models[1], &self.q[1], &self.a_true[1])?,
        ];
        let targets = self.targets(time);
        let errors = TaskErrors::new(&est.tool, &est.camera, &targets);

        // Ground-truth visibility and both cone margins.
        let tip_true = truth[0].translation;
        let in_region = |pose: &DualQuaternion, p: &Quaternion| -> Result<bool> {
            Ok(match project_point(&cam_cfg.intrinsics, pose, p)? {
                Projection::Pixel { u, v } => {
                    u.abs() <= 0.5 * cam_cfg.fov_subregion[0] as f64 && v.abs() <= 0.5 * cam_cfg.fov_subregion[1] as f64
                }
                Projection::BehindCamera => false,
            })
        };
        let in_real_fov = in_region(&truth[1].pose, &tip_true)?;
        let in_estimated_fov = in_region(&est.camera.pose, &est.tool.translation)?;
        let y_true = to_optical_frame(&truth[1].rotation, &(tip_true - truth[1].translation).normalized())?;
        let theta_fov = off_axis_angle(&y_true);
        let g_true = (-y_true.z) - cam_cfg.theta_safe.cos();
        let (g_est, _) = fov_cone_margin(&est.optical(Space::Joint), &est.tip(Space::Joint), cam_cfg.theta_safe)?;

        let measurement = self.sensor.observe(&truth[1].pose, &tip_true, time, &mut self.rng)?;
        let y_hat = estimated_measurement(&est.tip(Space::Param), &est.optical(Space::Param))?;
        let y_error = measurement.map(|m| (y_hat - m.y).norm());

        // Control.
        let control_rows = self.control_rows(&est)?;
        let control = control_tick(
            &est.tool,
            &est.camera,
            &targets,
            &self.cfg.gains.task,
            &control_rows,
            Some(&self.warm_control),
        )?;
        self.count_failure(control.status)?;
        let mut mask = control_rows.activity_mask(&control.solution.active_set);
        if control.status == QpStatus::Optimal {
            self.warm_control = control.solution.active_set.clone();
        }

        // Adaptation, from the same state.
        let mut adaptation = None;
        let mut adapt_status = None;
        let mut a_next = self.a_hat;
        if self.cfg.adaptive {
            if let Some(m) = &measurement {
                let tip = est.tip(Space::Param);
                let optical = est.optical(Space::Param);
                let tool_frame = TrackedFrame::param_space(&est.tool, 0);
                let jac = TaskParamJacobians::new(&tool_frame, &optical, &targets);
                let rows = self.adaptation_rows(&est)?;
                let ac = &self.cfg.gains.adaptation;
                let gains = AdaptationGains::uniform(ac.eta_a, ac.damping);
                let input = AdaptationInput {
                    tip: &tip,
                    camera: &optical,
                    measurement: &m.y,
                    errors: &errors,
                    task_jacobians: &jac,
                    task_gains: &self.cfg.gains.task,
                    constraints: &rows,
                };
                let out = adapt_tick(&input, &gains, Some(&self.warm_adapt))?;
                self.count_failure(out.status)?;
                if out.status == QpStatus::Optimal {
                    self.warm_adapt = out.solution.active_set.clone();
                }
                let u = nalgebra::DVector::from_column_slice(out.u.as_slice());
                let lyap = crate::adaptive::lyapunov_row(&errors, &jac, &self.cfg.gains.task);
                let n = crate::adaptive::projector_rows(&tip, &optical)?;
                mask |= {
                    let mut all = rows.clone();
                    all.push(lyap.clone());
                    all.activity_mask(&out.solution.active_set)
                };
                adaptation = Some(AdaptationDiagnostics {
                    joints: self.q,
                    params: self.a_hat,
                    u: out.u,
                    status: out.status,
                    projector_residual: (n * &u).norm(),
                    lyapunov_rate: lyap.coefficients.dot(&u),
                });
                adapt_status = Some(out.status);
                a_next += out.u * dt;
            }
        }

        let record = TraceRecord {
            tick: self.tick,
            time,
            q: std::array::from_fn(|i| self.q[i / JOINTS][i % JOINTS]),
            params_hash: params_hash(&self.a_hat),
            params: None,
            t1_error: errors.t1.norm(),
            r1_error: errors.r1.norm(),
            t2_error: errors.t2.norm(),
            pixel: measurement.map(|m| m.pixel),
            y_error,
            g_fov: g_true,
            g_fov_estimated: g_est,
            theta_fov,
            in_real_fov,
            in_estimated_fov,
            active_mask: mask,
            control_status: status_name(control.status).to_string(),
            adaptation_status: adapt_status.map_or("skipped", status_name).to_string(),
        };

        for b in 0..2 {
            for k in 0..JOINTS {
                self.q[b][k] += control.u[b * JOINTS + k] * dt;
            }
        }
        self.a_hat = a_next;
        self.tick += 1;
        Ok(TickReport { record, adaptation })
    }

    fn param_error(&self, a_hat: &SystemParams) -> ParamError {
        let a_true = self.true_params();
        let mut sq = [0.0f64; 4];
        for i in 0..SYSTEM_PARAMS {
            let slot = 2 * (i / PARAMS)
                + match param_class(i % PARAMS) {
                    ParamClass::Length => 0,
                    ParamClass::Angle => 1,
                };
            sq[slot] += (a_hat[i] - a_true[i]).powi(2);
        }
        ParamError {
            tool_length_m: sq[0].sqrt(),
            tool_angle_rad: sq[1].sqrt(),
            camera_length_m: sq[2].sqrt(),
            camera_angle_rad: sq[3].sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: Summary,
}

/// Runs the configured scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    run_scenario_with(cfg, false)
}

/// As [`run_scenario`]; `dump_params` stores the full estimate in every record.
pub fn run_scenario_with(cfg: &ScenarioConfig, dump_params: bool) -> Result<ScenarioOutput> {
    let mut sim = Simulation::new(cfg)?;
    let initial_param_error = sim.param_error(&sim.a_nominal.clone());
    let ticks = cfg.trajectory.ticks();
    let mut trace = Vec::with_capacity(ticks);
    let mut max_lyapunov = f64::NEG_INFINITY;
    let mut max_projector = 0.0f64;
    let mut adaptation_ticks = 0;
    let mut adaptation_fallbacks = 0;
    while !sim.is_finished() {
        let a_before = *sim.estimated_params();
        let report = sim.step()?;
        let mut record = report.record;
        if dump_params {
            record.params = Some(a_before.iter().copied().collect());
        }
        if let Some(d) = report.adaptation {
            adaptation_ticks += 1;
            if d.status != QpStatus::Optimal {
                adaptation_fallbacks += 1;
            }
            max_lyapunov = max_lyapunov.max(d.lyapunov_rate);
            max_projector = max_projector.max(d.projector_residual);
        }
        trace.push(record);
    }

    let n = trace.len().max(1) as f64;
    let duty_ratio = trace.iter().filter(|r| r.in_real_fov).count() as f64 / n;
    let max_deviation = trace
        .iter()
        .map(|r| (r.theta_fov - cfg.camera.theta_safe).max(0.0))
        .fold(0.0, f64::max);
    let min_estimated_margin = trace
        .iter()
        .filter(|r| r.control_status == "optimal")
        .map(|r| r.g_fov_estimated)
        .fold(f64::INFINITY, f64::min);
    let tail: Vec<f64> = trace[trace.len() * 3 / 4..].iter().filter_map(|r| r.y_error).collect();
    let mean_tail = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let summary = Summary {
        format_version: TRACE_FORMAT_VERSION,
        adaptive: cfg.adaptive,
        seed: cfg.seed,
        ticks: trace.len(),
        duration_s: trace.len() as f64 * cfg.trajectory.dt(),
        duty_ratio,
        max_deviation_deg: max_deviation.to_degrees(),
        min_estimated_margin,
        estimated_fov_kept: min_estimated_margin >= -ESTIMATED_MARGIN_TOL,
        mean_y_error_last_quarter: mean_tail,
        final_y_error: trace.iter().rev().find_map(|r| r.y_error),
        control_fallbacks: trace.iter().filter(|r| r.control_status != "optimal").count(),
        adaptation_ticks,
        adaptation_fallbacks,
        max_lyapunov_rate: if adaptation_ticks > 0 { Some(max_lyapunov) } else { None },
        max_projector_residual: if adaptation_ticks > 0 {
            Some(max_projector)
        } else {
            None
        },
        initial_param_error,
        final_param_error: sim.param_error(sim.estimated_params()),
        final_params_hash: params_hash(sim.estimated_params()),
    };
    Ok(ScenarioOutput { trace, summary })
}
