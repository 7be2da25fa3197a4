//! Planar rigid-body poses, twists, and the SE(2) exponential/logarithm maps.
//!
//! Yaw is kept in the half-open interval `[-pi, pi)`; an angle of exactly `pi`
//! normalizes to `-pi`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Characteristic length (m/rad) that weights rotation against translation
/// when a twist is reduced to a single norm.
pub const TWIST_LENGTH_SCALE: f64 = 1.0;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = (theta + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs
    if t >= PI {
        t -= two_pi;
    }
    t
}

/// Robot state on SE(2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for PlanarPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl PlanarPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        rot2(self.theta)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &PlanarPose) -> PlanarPose {
        let t = self.rotation() * other.translation() + self.translation();
        PlanarPose::new(t.x, t.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> PlanarPose {
        let t = -(self.rotation().transpose() * self.translation());
        PlanarPose::new(t.x, t.y, -self.theta)
    }

    /// Applies the pose to a point in the body frame.
    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.translation()
    }

    /// Homogeneous 3x3 matrix.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix3::new(c, -s, self.x, s, c, self.y, 0.0, 0.0, 1.0)
    }

    /// Lifts the planar pose to 3-D: rotation about +z and translation
    /// `(x, y, z)` where `z` is the sensor mount height.
    pub fn lift(&self, z: f64) -> (nalgebra::Matrix3<f64>, Vector3<f64>) {
        let (s, c) = self.theta.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        (r, Vector3::new(self.x, self.y, z))
    }

    /// `other⁻¹ ∘ self` expressed as a twist.
    pub fn error_twist(&self, reference: &PlanarPose) -> PlanarTwist {
        log_se2(&reference.inverse().compose(self))
    }
}

pub fn rot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rot2`] with respect to the angle.
pub fn rot2_derivative(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Minimal-coordinate displacement on SE(2).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarTwist {
    pub rho_x: f64,
    pub rho_y: f64,
    pub omega: f64,
}

impl PlanarTwist {
    pub fn new(rho_x: f64, rho_y: f64, omega: f64) -> Self {
        Self { rho_x, rho_y, omega }
    }

    /// Euclidean norm with rotation scaled by [`TWIST_LENGTH_SCALE`].
    pub fn weighted_norm(&self) -> f64 {
        self.weighted_norm_squared().sqrt()
    }

    pub fn weighted_norm_squared(&self) -> f64 {
        let w = TWIST_LENGTH_SCALE * self.omega;
        self.rho_x * self.rho_x + self.rho_y * self.rho_y + w * w
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.rho_x, self.rho_y, self.omega)
    }
}

/// Returns `(sin(w)/w, (1 - cos(w))/w)` with series expansions near zero.
fn v_coefficients(omega: f64) -> (f64, f64) {
    if omega.abs() < 1e-6 {
        let w2 = omega * omega;
        (1.0 - w2 / 6.0, omega / 2.0 - omega * w2 / 24.0)
    } else {
        (omega.sin() / omega, (1.0 - omega.cos()) / omega)
    }
}

pub fn exp_se2(t: &PlanarTwist) -> PlanarPose {
    let (a, b) = v_coefficients(t.omega);
    let v = Matrix2::new(a, -b, b, a);
    let p = v * Vector2::new(t.rho_x, t.rho_y);
    PlanarPose::new(p.x, p.y, t.omega)
}

/// Logarithm of a pose. Poses sitting on the yaw boundary (`theta == -pi`)
/// are mapped with `omega = -pi`; use [`is_log_boundary`] to detect them.
pub fn log_se2(p: &PlanarPose) -> PlanarTwist {
    let omega = p.theta;
    let (a, b) = v_coefficients(omega);
    let det = a * a + b * b;
    // inverse of [[a, -b], [b, a]]
    let vinv = Matrix2::new(a, b, -b, a) / det;
    let rho = vinv * p.translation();
    PlanarTwist::new(rho.x, rho.y, omega)
}

/// True when the logarithm is ambiguous (yaw exactly at the `-pi` boundary).
pub fn is_log_boundary(p: &PlanarPose) -> bool {
    p.theta <= -PI
}
