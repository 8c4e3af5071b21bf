//! Coordinate frames, rotations and rigid transforms.
//!
//! Axis convention for every frame: `y` forward (LiDAR boresight / board
//! normal direction), `x` right, `z` up. A LiDAR return at vertical angle
//! `omega`, azimuth `alpha` and range `r` sits at
//!
//! ```text
//! x = r cos(omega) sin(alpha)
//! y = r cos(omega) cos(alpha)
//! z = r sin(omega)
//! ```
//!
//! Note that the elevation term uses `sin(omega)`. Writing `sin(alpha)` in the
//! `z` row (as some references print it) does not preserve range and breaks the
//! spinning-sensor geometry, so it is not used here.
//!
//! Rotations are intrinsic Z-Y-X: `R = Rz(yaw) * Ry(tilt) * Rx(roll)`, and a pose
//! maps LiDAR coordinates into the board frame as `p_O = R p_L + T`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named coordinate frame a point is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    /// LiDAR body frame.
    Lidar,
    /// Target board frame, origin at the board center, board surface at `y = 0`.
    Board,
    /// Photodetector array frame.
    Photodetector,
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Wrap an angle into `[0, 2pi)`.
pub fn wrap_positive(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Extrinsic pose of the LiDAR in the board frame.
///
/// Angles are radians and always normalized to `(-pi, pi]` by [`Pose6DOF::new`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6DOF {
    /// Rotation about `z`.
    pub yaw: f64,
    /// Rotation about `y`.
    pub tilt: f64,
    /// Rotation about `x`.
    pub roll: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Pose6DOF {
    pub fn new(yaw: f64, tilt: f64, roll: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            tilt: wrap_angle(tilt),
            roll: wrap_angle(roll),
            x,
            y,
            z,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Build from a parameter vector ordered `(yaw, tilt, roll, x, y, z)`.
    pub fn from_params(p: &[f64; 6]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }

    pub fn params(&self) -> [f64; 6] {
        [self.yaw, self.tilt, self.roll, self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_zyx(self.yaw, self.tilt, self.roll)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// The `[R|T]` transform taking LiDAR points into the board frame.
    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation(),
            translation: self.translation(),
            from: Frame::Lidar,
            to: Frame::Board,
        }
    }

    pub fn inverse(&self) -> Self {
        let r_t = self.rotation().transpose();
        let t = -(r_t * self.translation());
        matrix_to_pose(&r_t, &t)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose6DOF) -> Self {
        let r = self.rotation() * other.rotation();
        let t = self.rotation() * other.translation() + self.translation();
        matrix_to_pose(&r, &t)
    }
}

/// `Rz(yaw) * Ry(tilt) * Rx(roll)`.
pub fn rotation_zyx(yaw: f64, tilt: f64, roll: f64) -> Matrix3<f64> {
    let (sp, cp) = yaw.sin_cos();
    let (st, ct) = tilt.sin_cos();
    let (ss, cs) = roll.sin_cos();
    Matrix3::new(
        cp * ct,
        cp * st * ss - sp * cs,
        cp * st * cs + sp * ss,
        sp * ct,
        sp * st * ss + cp * cs,
        sp * st * cs - cp * ss,
        -st,
        ct * ss,
        ct * cs,
    )
}

/// Partial derivatives of [`rotation_zyx`] with respect to yaw, tilt and roll.
pub fn rotation_zyx_partials(yaw: f64, tilt: f64, roll: f64) -> [Matrix3<f64>; 3] {
    let (sp, cp) = yaw.sin_cos();
    let (st, ct) = tilt.sin_cos();
    let (ss, cs) = roll.sin_cos();
    let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cs, -ss, 0.0, ss, cs);
    let drz = Matrix3::new(-sp, -cp, 0.0, cp, -sp, 0.0, 0.0, 0.0, 0.0);
    let dry = Matrix3::new(-st, 0.0, ct, 0.0, 0.0, 0.0, -ct, 0.0, -st);
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -ss, -cs, 0.0, cs, -ss);
    [drz * ry * rx, rz * dry * rx, rz * ry * drx]
}

/// Recover a pose from a rotation matrix and translation.
///
/// Exact inverse of [`Pose6DOF::to_transform`] away from `|tilt| = pi/2`.
pub fn matrix_to_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Pose6DOF {
    let tilt = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    Pose6DOF::new(yaw, tilt, roll, t.x, t.y, t.z)
}

/// A point tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub frame: Frame,
    pub coords: Vector3<f64>,
}

impl CartesianPoint {
    pub fn new(frame: Frame, x: f64, y: f64, z: f64) -> Self {
        Self {
            frame,
            coords: Vector3::new(x, y, z),
        }
    }

    pub fn lidar(coords: Vector3<f64>) -> Self {
        Self {
            frame: Frame::Lidar,
            coords,
        }
    }

    pub fn board(coords: Vector3<f64>) -> Self {
        Self {
            frame: Frame::Board,
            coords,
        }
    }

    fn check_frame(&self, other: &CartesianPoint) -> Result<()> {
        if self.frame != other.frame {
            return Err(Error::FrameMismatch {
                expected: self.frame,
                actual: other.frame,
            });
        }
        Ok(())
    }

    pub fn distance(&self, other: &CartesianPoint) -> Result<f64> {
        self.check_frame(other)?;
        Ok((self.coords - other.coords).norm())
    }

    pub fn sub(&self, other: &CartesianPoint) -> Result<Vector3<f64>> {
        self.check_frame(other)?;
        Ok(self.coords - other.coords)
    }
}

/// One LiDAR return in sensor-native polar form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarBeam {
    /// Vertical (elevation) angle, radians.
    pub omega: f64,
    /// Azimuth, radians in `[0, 2pi)`, measured from boresight toward `+x`.
    pub alpha: f64,
    /// Range, meters.
    pub range: f64,
    pub channel: usize,
    pub azimuth_index: usize,
    pub reflectivity: u8,
}

impl PolarBeam {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.alpha.is_finite() && self.range.is_finite()) {
            return Err(Error::Domain(format!("non-finite beam {self:?}")));
        }
        if self.range <= 0.0 {
            return Err(Error::Domain(format!("range must be positive, got {}", self.range)));
        }
        Ok(())
    }

    pub fn direction(&self) -> Vector3<f64> {
        unit_direction(self.omega, self.alpha)
    }

    pub fn alpha_deg(&self) -> f64 {
        self.alpha.to_degrees()
    }
}

/// Unit ray direction for a given elevation and azimuth.
pub fn unit_direction(omega: f64, alpha: f64) -> Vector3<f64> {
    let (so, co) = omega.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Vector3::new(co * sa, co * ca, so)
}

pub fn polar_to_cartesian(b: &PolarBeam) -> Result<CartesianPoint> {
    b.validate()?;
    Ok(CartesianPoint::lidar(b.range * b.direction()))
}

/// Returns `(omega, alpha, r)` with `alpha` in `[0, 2pi)`.
pub fn cartesian_to_polar(p: &CartesianPoint) -> Result<(f64, f64, f64)> {
    let v = p.coords;
    if !v.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain("non-finite point".into()));
    }
    let r = v.norm();
    if r == 0.0 {
        return Err(Error::Domain("point at the origin has no direction".into()));
    }
    let omega = (v.z / r).clamp(-1.0, 1.0).asin();
    let alpha = wrap_positive(v.x.atan2(v.y));
    Ok((omega, alpha, r))
}

/// A rigid transform `p_to = R p_from + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub from: Frame,
    pub to: Frame,
}

impl RigidTransform {
    pub fn identity(from: Frame, to: Frame) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from,
            to,
        }
    }

    pub fn inverse(&self) -> Self {
        let r_t = self.rotation.transpose();
        Self {
            rotation: r_t,
            translation: -(r_t * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }
}

pub fn transform_point(m: &RigidTransform, p: &CartesianPoint) -> Result<CartesianPoint> {
    if p.frame != m.from {
        return Err(Error::FrameMismatch {
            expected: m.from,
            actual: p.frame,
        });
    }
    Ok(CartesianPoint {
        frame: m.to,
        coords: m.apply(&p.coords),
    })
}

/// Closed-form least-squares rigid fit (Kabsch) with `target ≈ R source + T`.
///
/// Requires at least three non-collinear source points.
pub fn kabsch(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if source.len() != target.len() {
        return Err(Error::Input("point sets differ in length".into()));
    }
    if source.len() < 3 {
        return Err(Error::Input(format!("need >= 3 pairs, got {}", source.len())));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = SVD::new(h, true, true);
    let sv = svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(Error::Rank("correspondences are collinear".into()));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    let r = v_t.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = ct - r * cs;
    Ok((r, t))
}
