//! Scenario configuration and its defaults.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::PinholeIntrinsics;
use crate::constraints::{Attachment, CollisionGeometry, EnvironmentPoint, Plane, Surface, Workspace};
use crate::error::{Error, Result};
use crate::kinematics::{DhRow, Frame, JointKind, JointLimits, PoseParams, SerialChainModel, JOINTS};
use crate::task::TaskGains;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub robots: RobotsConfig,
    pub camera: CameraConfig,
    pub gains: GainsConfig,
    pub trajectory: TrajectoryConfig,
    pub constraints: ConstraintsConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
    #[serde(default = "default_adaptive")]
    pub adaptive: bool,
}

fn default_adaptive() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsConfig {
    /// R1, holding the tool.
    pub tool: RobotConfig,
    /// R2, holding the camera. Its effector frame is the optical frame.
    pub camera: RobotConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    /// Nominal model; the estimator starts from its parameters.
    pub model: SerialChainModel,
    /// Seed configuration for initial inverse kinematics.
    pub home: [f64; JOINTS],
    pub perturbation: Perturbation,
}

/// Half-widths of the zero-mean uniform error added to the nominal
/// parameters to obtain the true plant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    /// m
    pub length: f64,
    /// rad
    pub angle: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub intrinsics: PinholeIntrinsics,
    /// Centered pixel region counted as the real field of view, px.
    pub fov_subregion: [u32; 2],
    /// Cone half-angle enforced on the estimated sight line, rad.
    pub theta_safe: f64,
    /// Working distance, m.
    pub d_image: f64,
    /// Half-width of the focal band, m.
    pub focal_band: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub task: TaskGains,
    pub adaptation: AdaptationConfig,
    /// Joint-limit damper gain η_j, 1/s.
    pub joint_limit_eta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    pub eta_a: f64,
    /// Diagonal entry of Λ_â.
    pub damping: f64,
    /// Length bounds: ±max(fraction·|nominal|, floor) around nominal.
    pub length_bound_fraction: f64,
    pub length_bound_floor: f64,
    /// Angle bounds: ±this around nominal, rad.
    pub angle_bound: f64,
    /// Rate limits, m/s and rad/s.
    pub length_rate: f64,
    pub angle_rate: f64,
    /// Box damper gain, 1/s.
    pub box_eta: f64,
    /// Mirror the collision rows in parameter space.
    pub mirror_collision: bool,
    /// Mirror the cone row in parameter space.
    pub mirror_fov: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub center: [f64; 3],
    /// m
    pub radius: f64,
    /// s
    pub period: f64,
    /// s
    pub duration: f64,
    /// Hz
    pub tick_rate: f64,
}

impl TrajectoryConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn ticks(&self) -> usize {
        (self.duration * self.tick_rate).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsConfig {
    pub geometry: CollisionGeometry,
    /// Non-optimal QP solves tolerated before the run aborts.
    pub qp_failure_budget: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of additive pixel noise, px.
    pub pixel_sigma: f64,
    /// Round measured pixels to integers.
    pub quantize: bool,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.robots.tool.model.validate()?;
        self.robots.camera.model.validate()?;
        self.camera.intrinsics.validate()?;
        self.gains.task.validate()?;
        self.constraints.geometry.validate()?;
        let t = &self.trajectory;
        if !(t.radius > 0.0 && t.period > 0.0 && t.duration >= 0.0 && t.tick_rate > 0.0) {
            return Err(Error::Config(
                "trajectory: radius, period and tick rate must be positive".into(),
            ));
        }
        let c = &self.camera;
        if !(c.theta_safe > 0.0 && c.theta_safe < FRAC_PI_2 && c.d_image > 0.0 && c.focal_band > 0.0) {
            return Err(Error::Config(
                "camera: invalid cone angle, working distance or band".into(),
            ));
        }
        if c.fov_subregion[0] > c.intrinsics.width || c.fov_subregion[1] > c.intrinsics.height {
            return Err(Error::Config("camera: FoV subregion larger than the sensor".into()));
        }
        let a = &self.gains.adaptation;
        if !(a.eta_a > 0.0 && a.damping > 0.0) {
            return Err(Error::Config("adaptation: eta_a and damping must be positive".into()));
        }
        if !(a.box_eta > 0.0 && a.length_rate > 0.0 && a.angle_rate > 0.0) {
            return Err(Error::Config("adaptation: box gain and rates must be positive".into()));
        }
        let eta_j = self.gains.joint_limit_eta;
        if !(eta_j > 0.0 && eta_j * t.dt() <= 1.0) {
            return Err(Error::Config(format!(
                "joint_limit_eta must satisfy 0 < eta·dt <= 1, got {eta_j}"
            )));
        }
        if !(self.noise.pixel_sigma >= 0.0) {
            return Err(Error::Config("noise: pixel_sigma must be non-negative".into()));
        }
        for p in [&self.robots.tool.perturbation, &self.robots.camera.perturbation] {
            if !(p.length >= 0.0 && p.angle >= 0.0) {
                return Err(Error::Config("perturbation magnitudes must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// 8-DoF branch: rotation about the world z axis at azimuth `phi`, a radial
/// rail, then a 6R arm with a spherical wrist.
pub fn branch_model(phi: f64, effector: PoseParams) -> SerialChainModel {
    let row = |theta, d, a, alpha| DhRow { theta, d, a, alpha };
    let revolute = |span: f64| JointLimits {
        min: -span,
        max: span,
        max_velocity: 1.0,
    };
    let mut joint_kinds = [JointKind::Revolute; JOINTS];
    joint_kinds[1] = JointKind::Prismatic;
    SerialChainModel {
        joint_kinds,
        dh: [
            row(phi + FRAC_PI_2, -0.1, 0.0, FRAC_PI_2),
            row(0.0, 0.45, 0.0, -FRAC_PI_2),
            row(FRAC_PI_2, 0.15, 0.0, FRAC_PI_2),
            row(0.0, 0.0, 0.25, 0.0),
            row(0.0, 0.0, 0.0, FRAC_PI_2),
            row(0.0, 0.25, 0.0, -FRAC_PI_2),
            row(0.0, 0.0, 0.0, FRAC_PI_2),
            row(0.0, 0.05, 0.0, 0.0),
        ],
        base: PoseParams::default(),
        effector,
        limits: [
            revolute(FRAC_PI_2),
            JointLimits {
                min: -0.15,
                max: 0.15,
                max_velocity: 0.1,
            },
            revolute(PI),
            revolute(PI),
            revolute(PI),
            revolute(PI),
            revolute(PI),
            revolute(PI),
        ],
    }
}

fn attachment(frame: Frame) -> Attachment {
    Attachment {
        frame,
        offset: [0.0; 3],
    }
}

fn environment_points() -> Vec<EnvironmentPoint> {
    vec![
        EnvironmentPoint {
            attachment: attachment(Frame::Link(4)),
            surface: Surface::CylinderWall,
        },
        EnvironmentPoint {
            attachment: attachment(Frame::Link(6)),
            surface: Surface::TopPlane,
        },
        EnvironmentPoint {
            attachment: attachment(Frame::Link(8)),
            surface: Surface::TopPlane,
        },
        EnvironmentPoint {
            attachment: attachment(Frame::Effector),
            surface: Surface::TopPlane,
        },
    ]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let tool = branch_model(
            PI,
            PoseParams {
                translation: [0.0, 0.0, 0.1],
                rotation: [0.0; 3],
            },
        );
        let camera = branch_model(
            0.0,
            PoseParams {
                translation: [0.0, 0.0, 0.05],
                rotation: [PI, 0.0, 0.0],
            },
        );
        let inter = [
            vec![
                attachment(Frame::Effector),
                attachment(Frame::Link(8)),
                attachment(Frame::Link(6)),
                attachment(Frame::Link(4)),
                attachment(Frame::Link(6)),
            ],
            vec![
                attachment(Frame::Effector),
                attachment(Frame::Link(8)),
                attachment(Frame::Link(6)),
                attachment(Frame::Link(4)),
                attachment(Frame::Effector),
            ],
        ];
        Self {
            robots: RobotsConfig {
                tool: RobotConfig {
                    model: tool,
                    home: [0.0, -0.04, 0.0, 0.63, 0.87, 0.0, -1.5, 0.0],
                    perturbation: Perturbation {
                        length: 0.4e-3,
                        angle: 0.1f64.to_radians(),
                    },
                },
                camera: RobotConfig {
                    model: camera,
                    home: [-0.26, 0.03, -0.82, 1.93, 0.07, 0.68, -1.56, 0.63],
                    perturbation: Perturbation {
                        length: 1e-3,
                        angle: 0.2f64.to_radians(),
                    },
                },
            },
            camera: CameraConfig {
                intrinsics: PinholeIntrinsics {
                    focal_length: 0.075,
                    pixel_pitch_x: 5e-6,
                    pixel_pitch_y: 5e-6,
                    width: 576,
                    height: 576,
                },
                fov_subregion: [345, 400],
                theta_safe: 0.55f64.to_radians(),
                d_image: 0.405,
                focal_band: 0.005,
            },
            gains: GainsConfig {
                task: TaskGains::default(),
                adaptation: AdaptationConfig {
                    eta_a: 7.0,
                    damping: 0.05,
                    length_bound_fraction: 0.1,
                    length_bound_floor: 0.01,
                    angle_bound: 10f64.to_radians(),
                    length_rate: 0.05,
                    angle_rate: 0.5,
                    box_eta: 1.0,
                    mirror_collision: true,
                    mirror_fov: true,
                },
                joint_limit_eta: 2.0,
            },
            trajectory: TrajectoryConfig {
                center: [0.0, 0.0, 0.03],
                radius: 0.04,
                period: 30.0,
                duration: 60.0,
                tick_rate: 32.0,
            },
            constraints: ConstraintsConfig {
                geometry: CollisionGeometry {
                    environment_points: [environment_points(), environment_points()],
                    inter_robot_points: inter,
                    workspace: Workspace {
                        axis_point: [0.0; 3],
                        axis_direction: [0.0, 0.0, 1.0],
                        radius: 0.08,
                        top: Plane {
                            normal: [0.0, 0.0, 1.0],
                            offset: 0.0,
                        },
                    },
                    plane_clearance: 0.01,
                    wall_clearance: 0.03,
                    inter_robot_distance: 0.05,
                    eta: 2.0,
                },
                qp_failure_budget: 32,
            },
            noise: NoiseConfig {
                pixel_sigma: 0.5,
                quantize: true,
            },
            seed: 1,
            adaptive: true,
        }
    }
}

/// Desired tool-tip position and orientation (pointing down) at time `t`.
pub fn circle_trajectory(t: f64, traj: &TrajectoryConfig) -> (crate::dq::Quaternion, crate::dq::Quaternion) {
    let phase = 2.0 * PI * t / traj.period;
    let c = Vector3::from(traj.center);
    let p = c + traj.radius * Vector3::new(phase.cos(), phase.sin(), 0.0);
    (
        crate::dq::Quaternion::from_vec3(&p),
        crate::dq::Quaternion::from_axis_angle(&Vector3::x(), PI),
    )
}
