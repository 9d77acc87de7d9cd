use serde::{Deserialize, Serialize};

use super::{Ray, Vec3};
use crate::error::{Error, Result};

/// Smallest accepted ray parameter; avoids re-hitting the surface just left.
pub const T_MIN: f64 = 1e-9;
/// Residual accepted for an on-surface point (mm).
pub const SURFACE_TOL: f64 = 1e-9;

/// Which way positive sag bends the surface away from its vertex plane.
///
/// `Downstream` is the usual sequential-design convention (sag measured along
/// the propagation direction, i.e. toward the detector). `Upstream` measures
/// sag toward the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SagDirection {
    #[default]
    Downstream,
    Upstream,
}

impl SagDirection {
    /// Sign mapping sag to the frame's z axis: z(r) = vertex_z + sign * sag(r).
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            SagDirection::Downstream => -1.0,
            SagDirection::Upstream => 1.0,
        }
    }
}

/// Rotationally symmetric even asphere with zero base curvature and conic:
/// sag(r) = alpha2 r^2 + alpha4 r^4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsphericSurface {
    /// Quadratic coefficient (1/mm).
    pub alpha2: f64,
    /// Quartic coefficient (1/mm^3).
    #[serde(default)]
    pub alpha4: f64,
    /// Axial position of the vertex in the lens frame (mm).
    pub vertex_z: f64,
    pub aperture_radius: f64,
    #[serde(default)]
    pub orientation: SagDirection,
}

/// Result of a successful ray-surface intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub t: f64,
    pub point: Vec3,
}

impl AsphericSurface {
    pub fn new(alpha2: f64, vertex_z: f64, aperture_radius: f64) -> Self {
        AsphericSurface {
            alpha2,
            alpha4: 0.0,
            vertex_z,
            aperture_radius,
            orientation: SagDirection::Downstream,
        }
    }

    pub fn with_orientation(mut self, orientation: SagDirection) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.aperture_radius > 0.0 && self.aperture_radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "aperture radius must be positive, got {}",
                self.aperture_radius
            )));
        }
        if !(self.alpha2.is_finite() && self.alpha4.is_finite() && self.vertex_z.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite surface coefficient".into()));
        }
        Ok(())
    }

    /// Axial sag at radial distance `r`.
    pub fn sag(&self, r: f64) -> Result<f64> {
        if !(0.0..=self.aperture_radius).contains(&r.abs()) {
            return Err(Error::OutOfAperture { r, aperture: self.aperture_radius });
        }
        Ok(self.sag_unchecked(r * r))
    }

    #[inline]
    fn sag_unchecked(&self, r2: f64) -> f64 {
        self.alpha2 * r2 + self.alpha4 * r2 * r2
    }

    /// Frame z coordinate of the surface at squared radius `r2`.
    #[inline]
    pub fn z_at(&self, r2: f64) -> f64 {
        self.vertex_z + self.orientation.sign() * self.sag_unchecked(r2)
    }

    /// Signed axial offset of `p` from the vertex, measured in the sag direction.
    #[inline]
    pub fn local_sag_of(&self, p: Vec3) -> f64 {
        self.orientation.sign() * (p.z - self.vertex_z)
    }

    /// Unit normal at `point`, oriented toward +z (the side light arrives from).
    pub fn surface_normal(&self, point: Vec3) -> Vec3 {
        let r2 = point.x * point.x + point.y * point.y;
        // d(sag)/dx = (2 alpha2 + 4 alpha4 r^2) x
        let slope = 2.0 * self.alpha2 + 4.0 * self.alpha4 * r2;
        let s = self.orientation.sign();
        Vec3::new(-s * slope * point.x, -s * slope * point.y, 1.0).normalized()
    }

    /// Nearest intersection with t > T_MIN inside the aperture.
    pub fn intersect(&self, ray: &Ray) -> Option<SurfaceHit> {
        if self.alpha4 == 0.0 {
            self.intersect_closed_form(ray)
        } else {
            let start = self.paraboloid_root(ray).or_else(|| self.vertex_plane_root(ray));
            self.intersect_newton(ray, start?)
        }
    }

    fn within_aperture(&self, p: Vec3) -> bool {
        p.x * p.x + p.y * p.y <= self.aperture_radius * self.aperture_radius
    }

    fn vertex_plane_root(&self, ray: &Ray) -> Option<f64> {
        let dz = ray.direction.z;
        if dz == 0.0 {
            return None;
        }
        Some((self.vertex_z - ray.origin.z) / dz)
    }

    /// Roots of the quadratic part only (ignores alpha4), sorted ascending.
    fn quadratic_roots(&self, ray: &Ray) -> [Option<f64>; 2] {
        let (o, d) = (ray.origin, ray.direction);
        let sa = self.orientation.sign() * self.alpha2;
        let a = sa * (d.x * d.x + d.y * d.y);
        let b = 2.0 * sa * (o.x * d.x + o.y * d.y) - d.z;
        let c = sa * (o.x * o.x + o.y * o.y) - (o.z - self.vertex_z);
        if a.abs() <= 1e-14 * b.abs().max(1e-300) {
            if b == 0.0 {
                return [None, None];
            }
            return [Some(-c / b), None];
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return [None, None];
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let (t1, t2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        [Some(lo), Some(hi)]
    }

    fn paraboloid_root(&self, ray: &Ray) -> Option<f64> {
        self.quadratic_roots(ray).into_iter().flatten().find(|&t| t > T_MIN)
    }

    /// Exact intersection for alpha4 = 0.
    pub fn intersect_closed_form(&self, ray: &Ray) -> Option<SurfaceHit> {
        self.quadratic_roots(ray)
            .into_iter()
            .flatten()
            .filter(|&t| t > T_MIN)
            .map(|t| SurfaceHit { t, point: ray.at(t) })
            .find(|h| self.within_aperture(h.point))
    }

    /// Safeguarded Newton iteration on g(t) = z(t) - surface_z(r(t)) from `t0`.
    pub fn intersect_newton(&self, ray: &Ray, t0: f64) -> Option<SurfaceHit> {
        let (o, d) = (ray.origin, ray.direction);
        let s = self.orientation.sign();
        let g = |t: f64| {
            let p = o + d * t;
            let r2 = p.x * p.x + p.y * p.y;
            let val = p.z - self.z_at(r2);
            let dsag = (self.alpha2 + 2.0 * self.alpha4 * r2) * 2.0 * (p.x * d.x + p.y * d.y);
            (val, d.z - s * dsag)
        };
        let mut t = t0.max(T_MIN * 2.0);
        let (mut val, mut deriv) = g(t);
        for _ in 0..100 {
            if deriv == 0.0 || !deriv.is_finite() {
                return None;
            }
            let mut step = val / deriv;
            let mut next = t - step;
            let mut tries = 0;
            // halve the step until the residual shrinks and t stays forward
            loop {
                if next > T_MIN && next.is_finite() {
                    let (nv, nd) = g(next);
                    if nv.abs() <= val.abs() || tries >= 30 {
                        t = next;
                        val = nv;
                        deriv = nd;
                        break;
                    }
                }
                tries += 1;
                if tries > 30 {
                    return None;
                }
                step *= 0.5;
                next = t - step;
            }
            if step.abs() <= 1e-14 * t.abs().max(1.0) || val.abs() < 1e-13 {
                break;
            }
        }
        if val.abs() > SURFACE_TOL {
            return None;
        }
        let point = ray.at(t);
        self.within_aperture(point).then_some(SurfaceHit { t, point })
    }
}

/// Thick lens: two aspheric surfaces around a block of glass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensElement {
    #[serde(default)]
    pub name: String,
    /// Surface facing the source.
    pub front: AsphericSurface,
    pub back: AsphericSurface,
    pub center_thickness: f64,
    pub refractive_index: f64,
    pub aperture_diameter: f64,
}

impl LensElement {
    /// Lens with its source-facing vertex at `front_vertex_z`.
    pub fn new(
        name: &str,
        front_alpha: f64,
        back_alpha: f64,
        front_vertex_z: f64,
        center_thickness: f64,
        refractive_index: f64,
        aperture_diameter: f64,
    ) -> Self {
        let radius = aperture_diameter / 2.0;
        LensElement {
            name: name.to_string(),
            front: AsphericSurface::new(front_alpha, front_vertex_z, radius),
            back: AsphericSurface::new(back_alpha, front_vertex_z - center_thickness, radius),
            center_thickness,
            refractive_index,
            aperture_diameter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.front.validate()?;
        self.back.validate()?;
        if !(self.center_thickness > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "lens `{}`: center thickness must be positive",
                self.name
            )));
        }
        if !(self.refractive_index > 1.0 && self.refractive_index.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "lens `{}`: refractive index must exceed 1",
                self.name
            )));
        }
        let gap = self.front.vertex_z - self.back.vertex_z;
        if (gap - self.center_thickness).abs() > 1e-9 {
            return Err(Error::InvalidGeometry(format!(
                "lens `{}`: vertex separation {gap} mm does not match center thickness {} mm",
                self.name, self.center_thickness
            )));
        }
        let half = self.aperture_diameter / 2.0 + 1e-12;
        if self.front.aperture_radius > half || self.back.aperture_radius > half {
            return Err(Error::InvalidGeometry(format!(
                "lens `{}`: surface aperture exceeds element diameter",
                self.name
            )));
        }
        let r2 = self.front.aperture_radius.min(self.back.aperture_radius).powi(2);
        // thickness monotone in r^2 for quadratic+quartic profiles with these signs;
        // sample to be safe when alpha4 != 0
        for k in 0..=32 {
            let q = r2 * k as f64 / 32.0;
            if self.front.z_at(q) <= self.back.z_at(q) {
                return Err(Error::InvalidGeometry(format!(
                    "lens `{}`: surfaces intersect inside the aperture",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Highest z reached by the lens within its aperture.
    pub fn top_z(&self) -> f64 {
        let r2 = self.front.aperture_radius.powi(2);
        self.front.z_at(0.0).max(self.front.z_at(r2))
    }

    /// Lowest z reached by the lens within its aperture.
    pub fn bottom_z(&self) -> f64 {
        let r2 = self.back.aperture_radius.powi(2);
        self.back.z_at(0.0).min(self.back.z_at(r2))
    }
}
