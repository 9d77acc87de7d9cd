//! cos^n LED emission restricted to a cone of directions.
//!
//! Only directions that can reach the first lens aperture are sampled. Each
//! ray carries weight (cone mass)/N, where the cone mass is the fraction of
//! the LED's unit power emitted into the cone, so the collected-power
//! estimator stays unbiased.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;

use crate::error::{Error, Result};
use crate::optics::{Ray, Vec3};

/// Circular cone of directions around `axis` (unit, world frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cone {
    pub axis: Vec3,
    /// Half-angle in radians.
    pub half_angle: f64,
}

impl Cone {
    pub fn new(axis: Vec3, half_angle: f64) -> Result<Self> {
        if !(half_angle > 0.0) || !half_angle.is_finite() || !(axis.norm() > 0.0) {
            return Err(Error::DegenerateCone(format!("half-angle {half_angle} rad")));
        }
        Ok(Cone { axis: axis.normalized(), half_angle: half_angle.min(PI) })
    }

    /// Full hemisphere in front of an emitter with unit normal `normal`.
    pub fn hemisphere(normal: Vec3) -> Self {
        Cone { axis: normal.normalized(), half_angle: FRAC_PI_2 }
    }

    /// Smallest cone from `apex_points` that contains every `target_points`
    /// direction, widened by `pad` (1.1 = 10 %).
    pub fn circumscribing(apex_points: &[Vec3], target_points: &[Vec3], axis_from: Vec3, axis_to: Vec3, pad: f64) -> Result<Self> {
        let axis = (axis_to - axis_from).normalized();
        let mut worst: f64 = 0.0;
        for &a in apex_points {
            for &t in target_points {
                let d = (t - a).normalized();
                worst = worst.max(d.dot(axis).clamp(-1.0, 1.0).acos());
            }
        }
        Cone::new(axis, worst * pad)
    }

    fn is_centered_on(&self, normal: Vec3) -> bool {
        self.axis.cross(normal).norm() < 1e-15 && self.axis.dot(normal) > 0.0
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Normalized cos^n radiant intensity per steradian.
#[inline]
fn intensity(cos_phi: f64, cn: f64) -> f64 {
    if cos_phi <= 0.0 {
        0.0
    } else {
        (cn + 1.0) / (2.0 * PI) * cos_phi.powf(cn)
    }
}

/// Fraction of unit LED power emitted into `cone` by a cos^cn emitter with
/// unit `normal`.
pub fn cone_mass(normal: Vec3, cn: f64, cone: &Cone) -> f64 {
    if cone.is_centered_on(normal) {
        let a = cone.half_angle.min(FRAC_PI_2);
        return 1.0 - a.cos().powf(cn + 1.0);
    }
    let beta = cone.axis.dot(normal).clamp(-1.0, 1.0).acos();
    if beta - cone.half_angle >= FRAC_PI_2 {
        return 0.0;
    }
    // polar angle by Gauss-Legendre, azimuth by the periodic trapezoid rule
    let (nodes, weights) = gauss_legendre(48);
    let n_psi = 96;
    let u = cone.axis.any_orthonormal();
    let v = cone.axis.cross(u);
    let a = cone.half_angle;
    let mut total = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let theta = 0.5 * a * (x + 1.0);
        let (st, ct) = theta.sin_cos();
        let mut ring = 0.0;
        for k in 0..n_psi {
            let psi = 2.0 * PI * k as f64 / n_psi as f64;
            let d = cone.axis * ct + (u * psi.cos() + v * psi.sin()) * st;
            ring += intensity(d.dot(normal), cn);
        }
        total += w * 0.5 * a * st * ring * (2.0 * PI / n_psi as f64);
    }
    total
}

/// Direction inside `cone` distributed by the cos^cn law about `normal`.
pub fn sample_direction<R: Rng + ?Sized>(rng: &mut R, normal: Vec3, cn: f64, cone: &Cone) -> Vec3 {
    let u = cone.axis.any_orthonormal();
    let v = cone.axis.cross(u);
    if cone.is_centered_on(normal) {
        // inverse CDF of F(phi) = 1 - cos^(cn+1)(phi), truncated at the half-angle
        let a = cone.half_angle.min(FRAC_PI_2);
        let tail = a.cos().powf(cn + 1.0);
        let xi: f64 = rng.random();
        let cos_phi = (1.0 - xi * (1.0 - tail)).powf(1.0 / (cn + 1.0));
        let sin_phi = (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
        let psi = 2.0 * PI * rng.random::<f64>();
        return (cone.axis * cos_phi + (u * psi.cos() + v * psi.sin()) * sin_phi).normalized();
    }
    let beta = cone.axis.dot(normal).clamp(-1.0, 1.0).acos();
    let peak = (beta - cone.half_angle).max(0.0).cos().powf(cn);
    let cos_a = cone.half_angle.cos();
    loop {
        let ct = 1.0 - rng.random::<f64>() * (1.0 - cos_a);
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        let psi = 2.0 * PI * rng.random::<f64>();
        let d = (cone.axis * ct + (u * psi.cos() + v * psi.sin()) * st).normalized();
        let c = d.dot(normal);
        if c > 0.0 && rng.random::<f64>() * peak <= c.powf(cn) {
            return d;
        }
    }
}

/// One LED prepared for sampling: placement, emission cone and per-ray weight.
#[derive(Debug, Clone)]
pub struct Emitter {
    pub index: usize,
    pub center: Vec3,
    pub normal: Vec3,
    /// In-plane unit axes of the emitting square.
    pub u: Vec3,
    pub v: Vec3,
    pub half_size: f64,
    pub lambertian_exponent: f64,
    pub cone: Cone,
    /// Fraction of LED power inside `cone`.
    pub cone_mass: f64,
}

impl Emitter {
    /// Origin uniform over the emitting square, direction from the cone.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, weight: f64) -> Ray {
        let a = (rng.random::<f64>() - 0.5) * 2.0 * self.half_size;
        let b = (rng.random::<f64>() - 0.5) * 2.0 * self.half_size;
        let origin = self.center + self.u * a + self.v * b;
        let dir = sample_direction(rng, self.normal, self.lambertian_exponent, &self.cone);
        Ray::new(origin, dir, weight)
    }

    pub fn corners(&self) -> [Vec3; 4] {
        let h = self.half_size;
        [
            self.center + self.u * h + self.v * h,
            self.center + self.u * h - self.v * h,
            self.center - self.u * h + self.v * h,
            self.center - self.u * h - self.v * h,
        ]
    }
}
