use serde::{Deserialize, Serialize};

use crate::optics::{Mat3, Vec3};

/// Rigid-body placement of an array, rotation taken about the array's
/// geometric center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    /// mm
    #[serde(default)]
    pub translation: Vec3,
    #[serde(default = "default_axis")]
    pub axis: Vec3,
    #[serde(default)]
    pub angle_deg: f64,
    /// World-frame rotation pivot; the array's current center when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<Vec3>,
}

fn default_axis() -> Vec3 {
    Vec3::Z
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { translation: Vec3::ZERO, axis: Vec3::Z, angle_deg: 0.0, pivot: None };

    pub fn translation(t: Vec3) -> Self {
        Pose { translation: t, ..Pose::IDENTITY }
    }

    pub fn rotation(axis: Vec3, angle_deg: f64) -> Self {
        Pose { translation: Vec3::ZERO, axis: axis.normalized(), angle_deg, pivot: None }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == Vec3::ZERO && self.angle_deg == 0.0
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::from_axis_angle(self.axis, self.angle_deg.to_radians())
    }

    pub fn with_pivot(mut self, pivot: Vec3) -> Self {
        self.pivot = Some(pivot);
        self
    }

    /// `self` applied after `first`. Without explicit pivots each rotation
    /// turns about the array's current center, so translations add and
    /// rotations multiply. Use `compose_in` when either pose has a pivot.
    pub fn compose(&self, first: &Pose) -> Pose {
        self.compose_in(first, Vec3::ZERO)
    }

    /// Composition for an array whose nominal center is `center`.
    pub fn compose_in(&self, first: &Pose, center: Vec3) -> Pose {
        if self.is_identity() {
            return *first;
        }
        if first.is_identity() && first.pivot.is_none() {
            return *self;
        }
        if self.pivot.is_none() && first.pivot.is_none() {
            let translation = first.translation + self.translation;
            if self.angle_deg == 0.0 {
                return Pose { translation, ..*first };
            }
            if first.angle_deg == 0.0 {
                return Pose { translation, ..*self };
            }
            let (axis, angle) = self.matrix().mul(&first.matrix()).to_axis_angle();
            return Pose { translation, axis, angle_deg: angle.to_degrees(), pivot: None };
        }
        // world = R2 (R1 (l - p1) + p1 + t1 - p2) + p2 + t2
        let r1 = first.matrix();
        let r2 = self.matrix();
        let p1 = first.pivot.unwrap_or(center);
        let current = r1.apply(center - p1) + p1 + first.translation;
        let p2 = self.pivot.unwrap_or(current);
        let translation = r2.apply(p1 + first.translation - p2) + p2 + self.translation - p1;
        let (axis, angle) = r2.mul(&r1).to_axis_angle();
        Pose { translation, axis, angle_deg: angle.to_degrees(), pivot: Some(p1) }
    }

    /// Frame transform for an array whose nominal center is `pivot`.
    pub fn placement(&self, pivot: Vec3) -> Placement {
        Placement { rot: self.matrix(), pivot: self.pivot.unwrap_or(pivot), translation: self.translation }
    }
}

/// World <-> local transform: world = R (local - pivot) + pivot + translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub rot: Mat3,
    pub pivot: Vec3,
    pub translation: Vec3,
}

impl Placement {
    pub const IDENTITY: Placement =
        Placement { rot: Mat3::IDENTITY, pivot: Vec3::ZERO, translation: Vec3::ZERO };

    #[inline]
    pub fn point_to_world(&self, p: Vec3) -> Vec3 {
        self.rot.apply(p - self.pivot) + self.pivot + self.translation
    }

    #[inline]
    pub fn point_to_local(&self, p: Vec3) -> Vec3 {
        self.rot.transpose().apply(p - self.pivot - self.translation) + self.pivot
    }

    #[inline]
    pub fn dir_to_world(&self, d: Vec3) -> Vec3 {
        self.rot.apply(d)
    }

    #[inline]
    pub fn dir_to_local(&self, d: Vec3) -> Vec3 {
        self.rot.transpose().apply(d)
    }

    pub fn is_identity(&self) -> bool {
        self.rot.is_identity() && self.translation == Vec3::ZERO
    }

    /// Cached inverse-rotation form for the tracing hot path.
    pub fn local_frame(&self) -> LocalFrame {
        LocalFrame {
            rot_t: self.rot.transpose(),
            offset: self.pivot + self.translation,
            pivot: self.pivot,
            identity: self.is_identity(),
        }
    }
}

/// World-to-local map with the transpose precomputed.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    rot_t: Mat3,
    offset: Vec3,
    pivot: Vec3,
    identity: bool,
}

impl LocalFrame {
    #[inline]
    pub fn point(&self, p: Vec3) -> Vec3 {
        if self.identity {
            p
        } else {
            self.rot_t.apply(p - self.offset) + self.pivot
        }
    }

    #[inline]
    pub fn dir(&self, d: Vec3) -> Vec3 {
        if self.identity {
            d
        } else {
            self.rot_t.apply(d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_round_trip() {
        let pose = Pose {
            translation: Vec3::new(1.0, -2.0, 3.0),
            axis: Vec3::new(1.0, 1.0, 0.0).normalized(),
            angle_deg: 17.0,
            pivot: None,
        };
        let pl = pose.placement(Vec3::new(0.0, 0.0, 50.0));
        let p = Vec3::new(3.0, 4.0, 5.0);
        let back = pl.point_to_local(pl.point_to_world(p));
        assert!((back - p).norm() < 1e-12);
        let lf = pl.local_frame();
        assert!((lf.point(pl.point_to_world(p)) - p).norm() < 1e-12);
        // pivot is fixed by a pure rotation
        let rot = Pose::rotation(Vec3::X, 30.0).placement(Vec3::new(0.0, 0.0, 50.0));
        assert!((rot.point_to_world(Vec3::new(0.0, 0.0, 50.0)) - Vec3::new(0.0, 0.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn compose_rotations_about_same_axis_adds_angles() {
        let a = Pose::rotation(Vec3::X, 10.0);
        let b = Pose::rotation(Vec3::X, 5.0);
        let c = b.compose(&a);
        assert!((c.angle_deg - 15.0).abs() < 1e-9);
        assert!((c.axis - Vec3::X).norm() < 1e-9);
    }

    #[test]
    fn compose_with_pivot_matches_sequential_application() {
        let center = Vec3::new(0.0, 0.0, 5050.0);
        let first = Pose { translation: Vec3::new(1.0, 2.0, 0.0), ..Pose::rotation(Vec3::Z, 180.0) };
        let second = Pose::rotation(Vec3::X, 17.0).with_pivot(Vec3::ZERO);
        let c = second.compose_in(&first, center);
        let a = first.placement(center);
        let b = second.placement(center);
        let both = c.placement(center);
        for p in [Vec3::new(30.0, -30.0, 5050.0), Vec3::new(-10.0, 10.0, 5050.0)] {
            let seq = b.point_to_world(a.point_to_world(p));
            assert!((both.point_to_world(p) - seq).norm() < 1e-9);
        }
    }
}
