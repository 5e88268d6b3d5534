//! Pinhole measurement model.
//!
//! The optical frame looks along `−k̂`: a pixel `(u, v)`, measured from the
//! principal point, sits at `u s_x î + v s_y ĵ − f k̂` in that frame.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dq::{adjoint, DualQuaternion, Quaternion};
use crate::error::{Error, Result};

/// Smallest camera-to-target distance accepted for the estimated line.
pub const D_MIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    /// Focal length in m.
    pub focal_length: f64,
    /// Pixel pitch along u, m/px.
    pub pixel_pitch_x: f64,
    /// Pixel pitch along v, m/px.
    pub pixel_pitch_y: f64,
    /// Sensor resolution in px.
    pub width: u32,
    pub height: u32,
}

impl PinholeIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length > 0.0 && self.pixel_pitch_x > 0.0 && self.pixel_pitch_y > 0.0) {
            return Err(Error::Config(
                "intrinsics: focal length and pixel pitch must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("intrinsics: resolution must be non-zero".into()));
        }
        Ok(())
    }

    /// True when the center-adjusted pixel lies on the sensor.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u.abs() <= 0.5 * self.width as f64 && v.abs() <= 0.5 * self.height as f64
    }
}

/// A single pixel observation turned into a line direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineMeasurement {
    /// Measured direction in the optical frame (pure, unit).
    pub y: Quaternion,
    pub pixel: (f64, f64),
    pub timestamp: f64,
}

/// Direction of the ray through pixel `(u, v)` in the optical frame.
pub fn measure_line_direction(intr: &PinholeIntrinsics, u: f64, v: f64) -> Quaternion {
    let p = Quaternion::pure(u * intr.pixel_pitch_x, v * intr.pixel_pitch_y, -intr.focal_length);
    p * (1.0 / p.norm())
}

/// Unit direction from the camera position `t2` to the target `t1`.
pub fn estimated_line_direction(t1: &Quaternion, t2: &Quaternion) -> Result<Quaternion> {
    let h = *t1 - *t2;
    let n = h.norm();
    if n <= D_MIN {
        return Err(Error::Degenerate(format!(
            "target is {n:.3e} m from the optical center"
        )));
    }
    Ok(h * (1.0 / n))
}

/// Expresses a world direction in the optical frame: `Ad(r2*) l`.
pub fn to_optical_frame(r2: &Quaternion, l_world: &Quaternion) -> Result<Quaternion> {
    adjoint(&r2.conj(), l_world)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64 },
    BehindCamera,
}

/// Center-adjusted pixel of a world point, or [`Projection::BehindCamera`]
/// when the point has non-negative depth along `k̂` of the optical frame.
pub fn project_point(
    intr: &PinholeIntrinsics,
    camera_pose: &DualQuaternion,
    p_world: &Quaternion,
) -> Result<Projection> {
    let (r, t) = crate::dq::pose_decompose(camera_pose)?;
    let rel = *p_world - t;
    if rel.norm() <= D_MIN {
        return Err(Error::Degenerate("point at the optical center".into()));
    }
    let p = adjoint(&r.conj(), &rel)?;
    if p.z >= 0.0 {
        return Ok(Projection::BehindCamera);
    }
    let scale = -intr.focal_length / p.z;
    Ok(Projection::Pixel {
        u: p.x * scale / intr.pixel_pitch_x,
        v: p.y * scale / intr.pixel_pitch_y,
    })
}

/// Angle between the optical axis and the optical-frame direction `y`.
pub fn off_axis_angle(y: &Quaternion) -> f64 {
    (-y.z / y.norm()).clamp(-1.0, 1.0).acos()
}

/// Synthetic stand-in for the image tracker: projects the true tool tip and
/// reports a noisy, optionally quantized pixel.
#[derive(Clone, Debug)]
pub struct PixelSensor {
    pub intrinsics: PinholeIntrinsics,
    pub noise: Option<Normal<f64>>,
    pub quantize: bool,
}

impl PixelSensor {
    pub fn new(intrinsics: PinholeIntrinsics, noise_sigma_px: f64, quantize: bool) -> Result<Self> {
        let noise = if noise_sigma_px > 0.0 {
            Some(Normal::new(0.0, noise_sigma_px).map_err(|e| Error::Config(format!("noise: {e}")))?)
        } else {
            None
        };
        Ok(Self {
            intrinsics,
            noise,
            quantize,
        })
    }

    /// Observes `p_world` from `camera_pose`. Returns `None` when the point is
    /// behind the camera or off the sensor.
    pub fn observe<R: Rng>(
        &self,
        camera_pose: &DualQuaternion,
        p_world: &Quaternion,
        timestamp: f64,
        rng: &mut R,
    ) -> Result<Option<LineMeasurement>> {
        let Projection::Pixel { mut u, mut v } = project_point(&self.intrinsics, camera_pose, p_world)? else {
            return Ok(None);
        };
        if let Some(noise) = &self.noise {
            u += noise.sample(rng);
            v += noise.sample(rng);
        }
        if self.quantize {
            u = u.round();
            v = v.round();
        }
        if !self.intrinsics.contains(u, v) {
            return Ok(None);
        }
        Ok(Some(LineMeasurement {
            y: measure_line_direction(&self.intrinsics, u, v),
            pixel: (u, v),
            timestamp,
        }))
    }
}
