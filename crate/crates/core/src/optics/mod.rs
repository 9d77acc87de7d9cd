//! Geometric-optics primitives: even-asphere surfaces, ray intersection and
//! Snell refraction. Everything here is a pure function of its inputs.

mod surface;
mod vec3;

pub use surface::{AsphericSurface, LensElement, SagDirection, SurfaceHit, SURFACE_TOL, T_MIN};
pub use vec3::{Mat3, Vec3};

use crate::error::{Error, Result};

/// A weighted ray. `weight` is the fraction of source power it carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub weight: f64,
    pub medium_index: f64,
}

impl Ray {
    /// Ray in air; `direction` is normalized here.
    pub fn new(origin: Vec3, direction: Vec3, weight: f64) -> Self {
        Ray { origin, direction: direction.normalized(), weight, medium_index: 1.0 }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Snell refraction of unit `incident` through a surface with unit `normal`
/// facing the incoming ray (incident . normal < 0).
pub fn refract(incident: Vec3, normal: Vec3, n1: f64, n2: f64) -> Result<Vec3> {
    let cos_i = -incident.dot(normal);
    let eta = n1 / n2;
    let sin2_i = (1.0 - cos_i * cos_i).max(0.0);
    let k = 1.0 - eta * eta * sin2_i;
    if k < 0.0 {
        return Err(Error::TotalInternalReflection { sin_incidence: sin2_i.sqrt(), n1, n2 });
    }
    let t = incident * eta + normal * (eta * cos_i - k.sqrt());
    // renormalize away rounding so chained refractions stay unit length
    Ok(t.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sin_between(a: Vec3, b: Vec3) -> f64 {
        a.cross(b).norm()
    }

    #[test]
    fn normal_incidence_passes_straight() {
        let d = Vec3::new(0.0, 0.0, -1.0);
        let t = refract(d, Vec3::Z, 1.0, 1.7).unwrap();
        assert!((t - d).norm() < 1e-15);
    }

    #[test]
    fn forty_five_degrees_into_glass() {
        let th = 45f64.to_radians();
        let d = Vec3::new(th.sin(), 0.0, -th.cos());
        let t = refract(d, Vec3::Z, 1.0, 1.5).unwrap();
        let th2 = t.x.atan2(-t.z).to_degrees();
        let expect = (th.sin() / 1.5).asin().to_degrees();
        assert!((th2 - expect).abs() < 1e-10);
        assert!((th2 - 28.126).abs() < 1e-3);
    }

    #[test]
    fn sixty_degrees_out_of_glass_is_tir() {
        let th = 60f64.to_radians();
        let d = Vec3::new(th.sin(), 0.0, -th.cos());
        assert!(matches!(
            refract(d, Vec3::Z, 1.5, 1.0),
            Err(Error::TotalInternalReflection { .. })
        ));
        // just under the 41.81 degree critical angle still transmits
        let th = 41.8f64.to_radians();
        let d = Vec3::new(th.sin(), 0.0, -th.cos());
        assert!(refract(d, Vec3::Z, 1.5, 1.0).is_ok());
    }

    proptest! {
        #[test]
        fn snell_invariant_holds(
            theta in 0.0f64..1.5,
            phi in 0.0f64..6.283,
            tilt in 0.0f64..1.0,
            n1 in 1.0f64..2.0,
            n2 in 1.0f64..2.0,
        ) {
            let normal = Vec3::new(tilt.sin() * phi.cos(), tilt.sin() * phi.sin(), tilt.cos());
            let u = normal.any_orthonormal();
            let d = (u * theta.sin() - normal * theta.cos()).normalized();
            match refract(d, normal, n1, n2) {
                Ok(t) => {
                    let lhs = n1 * sin_between(d, normal);
                    let rhs = n2 * sin_between(t, normal);
                    prop_assert!((lhs - rhs).abs() < 1e-10);
                    // coplanar with incident and normal
                    prop_assert!(t.dot(d.cross(normal)).abs() < 1e-10);
                    prop_assert!((t.norm() - 1.0).abs() < 1e-12);
                }
                Err(_) => prop_assert!(n1 * sin_between(d, normal) > n2 - 1e-12),
            }
        }
    }
}
