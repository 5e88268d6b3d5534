//! Quaternion and dual-quaternion algebra.
//!
//! Coefficients are stored as `(w, x, y, z)`, the same order used by
//! [`Quaternion::vec4`]. Poses are unit dual quaternions `r + ½ε t r` with
//! `r` a unit rotation quaternion and `t` a pure translation quaternion.
//!
//! Nothing here renormalizes automatically: products of unit values drift
//! by rounding, and callers that integrate decide when to call
//! [`DualQuaternion::normalized`].

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Tolerance for the "unit" flag on quaternions.
pub const UNIT_TOL: f64 = 1e-12;
/// Tolerance for the "pure" flag on quaternions.
pub const PURE_TOL: f64 = 1e-12;
/// Tolerance used when an operation rejects a non-unit rotation.
pub const ROTATION_TOL: f64 = 1e-9;
/// Tolerance for unit dual quaternions (norm and orthogonality).
pub const POSE_TOL: f64 = 1e-9;

/// `vec₄ q* = C₄ vec₄ q`.
pub fn conjugation_matrix() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, -1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Self = Self::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Self = Self::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Self = Self::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Self = Self::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Pure quaternion `x î + y ĵ + z k̂`.
    pub const fn pure(x: f64, y: f64, z: f64) -> Self {
        Self::new(0.0, x, y, z)
    }

    pub fn from_vec3(v: &Vector3<f64>) -> Self {
        Self::pure(v.x, v.y, v.z)
    }

    pub fn from_vec4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        let (s, c) = (0.5 * angle).sin_cos();
        if n == 0.0 {
            return Self::new(c, 0.0, 0.0, 0.0);
        }
        let a = axis / n;
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn vec4(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    /// Imaginary part as a 3-vector; rejects quaternions with a real part.
    pub fn vec3(&self) -> Result<Vector3<f64>> {
        if self.w.abs() > PURE_TOL {
            return Err(Error::NotPure { op: "vec3", w: self.w });
        }
        Ok(self.imag())
    }

    /// Imaginary part without the purity check.
    pub fn imag(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Self {
        *self * (1.0 / self.norm())
    }

    pub fn is_pure(&self) -> bool {
        self.w.abs() <= PURE_TOL
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Cross product of the imaginary parts, returned as a pure quaternion.
    pub fn cross(&self, other: &Self) -> Self {
        Self::from_vec3(&self.imag().cross(&other.imag()))
    }

    /// Rotation angle in `[0, 2π]` of a unit quaternion.
    pub fn rotation_angle(&self) -> f64 {
        2.0 * self.w.clamp(-1.0, 1.0).acos()
    }

    /// `H⁺₄(q)`, with `vec₄(q b) = H⁺₄(q) vec₄ b`.
    pub fn hamilton_plus(&self) -> Matrix4<f64> {
        let Self { w, x, y, z } = *self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// `H⁻₄(q)`, with `vec₄(a q) = H⁻₄(q) vec₄ a`.
    pub fn hamilton_minus(&self) -> Matrix4<f64> {
        let Self { w, x, y, z } = *self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }
}

impl Mul for Quaternion {
    type Output = Self;

    fn mul(self, b: Self) -> Self {
        let a = self;
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Mul<f64> for Quaternion {
    type Output = Self;

    fn mul(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
}

impl Add for Quaternion {
    type Output = Self;

    fn add(self, b: Self) -> Self {
        Self::new(self.w + b.w, self.x + b.x, self.y + b.y, self.z + b.z)
    }
}

impl Sub for Quaternion {
    type Output = Self;

    fn sub(self, b: Self) -> Self {
        Self::new(self.w - b.w, self.x - b.x, self.y - b.y, self.z - b.z)
    }
}

impl Neg for Quaternion {
    type Output = Self;

    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Hamilton product. Equivalent to `a * b`.
pub fn qmul(a: Quaternion, b: Quaternion) -> Quaternion {
    a * b
}

/// `Ad(r) p = r p r*`: rotates the pure quaternion `p` by the unit quaternion `r`.
pub fn adjoint(r: &Quaternion, p: &Quaternion) -> Result<Quaternion> {
    let norm = r.norm();
    if (norm - 1.0).abs() > ROTATION_TOL {
        return Err(Error::NotUnit { op: "adjoint", norm });
    }
    if !p.is_pure() {
        return Err(Error::NotPure { op: "adjoint", w: p.w });
    }
    let mut out = *r * *p * r.conj();
    out.w = 0.0;
    Ok(out)
}

/// `p + ε d` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DualQuaternion {
    pub primary: Quaternion,
    pub dual: Quaternion,
}

impl DualQuaternion {
    pub const ONE: Self = Self {
        primary: Quaternion::ONE,
        dual: Quaternion::ZERO,
    };

    pub const fn new(primary: Quaternion, dual: Quaternion) -> Self {
        Self { primary, dual }
    }

    /// `r + ½ε t r`.
    pub fn from_rotation_translation(r: Quaternion, t: Quaternion) -> Self {
        Self::new(r, t * r * 0.5)
    }

    pub fn from_rotation(r: Quaternion) -> Self {
        Self::new(r, Quaternion::ZERO)
    }

    pub fn from_translation(t: Quaternion) -> Self {
        Self::new(Quaternion::ONE, t * 0.5)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.primary.conj(), self.dual.conj())
    }

    pub fn rotation(&self) -> Quaternion {
        self.primary
    }

    /// `t = 2 d r*`.
    pub fn translation(&self) -> Quaternion {
        let mut t = self.dual * self.primary.conj() * 2.0;
        t.w = 0.0;
        t
    }

    pub fn is_unit(&self) -> bool {
        (self.primary.norm() - 1.0).abs() <= POSE_TOL && self.primary.dot(&self.dual).abs() <= POSE_TOL
    }

    pub fn is_finite(&self) -> bool {
        self.primary.is_finite() && self.dual.is_finite()
    }

    /// Projects onto the unit dual quaternions: unit primary, dual orthogonal to it.
    pub fn normalized(&self) -> Self {
        let n = self.primary.norm();
        let p = self.primary * (1.0 / n);
        let d = self.dual * (1.0 / n);
        let d = d - p * p.dot(&d);
        Self::new(p, d)
    }

    fn check_unit(&self, op: &'static str) -> Result<()> {
        let norm = self.primary.norm();
        if (norm - 1.0).abs() > POSE_TOL {
            return Err(Error::NotUnit { op, norm });
        }
        let ortho = self.primary.dot(&self.dual);
        if ortho.abs() > POSE_TOL {
            return Err(Error::NotUnit {
                op,
                norm: 1.0 + ortho.abs(),
            });
        }
        Ok(())
    }
}

impl Mul for DualQuaternion {
    type Output = Self;

    fn mul(self, b: Self) -> Self {
        Self::new(self.primary * b.primary, self.primary * b.dual + self.dual * b.primary)
    }
}

impl Add for DualQuaternion {
    type Output = Self;

    fn add(self, b: Self) -> Self {
        Self::new(self.primary + b.primary, self.dual + b.dual)
    }
}

impl Mul<f64> for DualQuaternion {
    type Output = Self;

    fn mul(self, s: f64) -> Self {
        Self::new(self.primary * s, self.dual * s)
    }
}

/// `a ∘ b` for rigid-body poses.
pub fn pose_compose(a: &DualQuaternion, b: &DualQuaternion) -> Result<DualQuaternion> {
    a.check_unit("pose_compose")?;
    b.check_unit("pose_compose")?;
    Ok(*a * *b)
}

/// Splits a pose into `(r, t)` with `x = r + ½ε t r`.
pub fn pose_decompose(x: &DualQuaternion) -> Result<(Quaternion, Quaternion)> {
    x.check_unit("pose_decompose")?;
    Ok((x.rotation(), x.translation()))
}

/// Plücker line: unit direction plus moment `p × l` for any point `p` on the line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PluckerLine {
    pub direction: Quaternion,
    pub moment: Quaternion,
}

impl PluckerLine {
    /// Line through `point` along `direction` (normalized internally).
    pub fn through(point: &Quaternion, direction: &Quaternion) -> Result<Self> {
        let n = direction.imag().norm();
        if n < 1e-12 {
            return Err(Error::Degenerate("line direction has zero length".into()));
        }
        let direction = Quaternion::from_vec3(&(direction.imag() / n));
        Ok(Self {
            direction,
            moment: point.cross(&direction),
        })
    }

    /// Euclidean distance from `point` to the line.
    pub fn distance(&self, point: &Quaternion) -> f64 {
        (point.cross(&self.direction) - self.moment).imag().norm()
    }
}
