use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Position (mm) or direction (dimensionless) in a right-handed frame.
/// The optical axis is +z, pointing from the detector plane toward the LEDs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    /// Radial distance from the z axis.
    #[inline]
    pub fn radial(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Any unit vector perpendicular to `self` (assumed unit).
    pub fn any_orthonormal(self) -> Vec3 {
        let helper = if self.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        self.cross(helper).normalized()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// 3x3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Rodrigues rotation about a unit `axis` by `angle` radians.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Mat3 {
        if angle == 0.0 {
            return Mat3::IDENTITY;
        }
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y],
            [t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x],
            [t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c],
        ])
    }

    /// Inverse of `from_axis_angle`; angle in [0, pi].
    pub fn to_axis_angle(&self) -> (Vec3, f64) {
        let m = &self.0;
        let trace = m[0][0] + m[1][1] + m[2][2];
        let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
        let angle = cos.acos();
        if angle < 1e-15 {
            return (Vec3::Z, 0.0);
        }
        let v = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
        if v.norm() > 1e-9 {
            return (v.normalized(), angle);
        }
        // angle ~ pi: axis from the symmetric part
        let xx = ((m[0][0] + 1.0) / 2.0).max(0.0).sqrt();
        let yy = ((m[1][1] + 1.0) / 2.0).max(0.0).sqrt();
        let zz = ((m[2][2] + 1.0) / 2.0).max(0.0).sqrt();
        let axis = if xx >= yy && xx >= zz {
            Vec3::new(xx, m[0][1] / (2.0 * xx), m[0][2] / (2.0 * xx))
        } else if yy >= zz {
            Vec3::new(m[0][1] / (2.0 * yy), yy, m[1][2] / (2.0 * yy))
        } else {
            Vec3::new(m[0][2] / (2.0 * zz), m[1][2] / (2.0 * zz), zz)
        };
        (axis.normalized(), angle)
    }

    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Mat3(t)
    }

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn is_identity(&self) -> bool {
        *self == Mat3::IDENTITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rodrigues_quarter_turn() {
        let r = Mat3::from_axis_angle(Vec3::Z, std::f64::consts::FRAC_PI_2);
        let v = r.apply(Vec3::X);
        assert!((v - Vec3::Y).norm() < 1e-15);
    }

    #[test]
    fn axis_angle_round_trip() {
        for &(axis, angle) in &[
            (Vec3::new(1.0, 2.0, -0.5), 0.3),
            (Vec3::X, 3.0),
            (Vec3::Z, std::f64::consts::PI),
            (Vec3::new(0.3, -0.2, 0.9), std::f64::consts::PI),
        ] {
            let m = Mat3::from_axis_angle(axis, angle);
            let (a2, ang2) = m.to_axis_angle();
            let m2 = Mat3::from_axis_angle(a2, ang2);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((m.0[i][j] - m2.0[i][j]).abs() < 1e-9, "{axis:?} {angle}");
                }
            }
        }
    }
}
