//! Declarative description of the optical link: LED array, lens stack and
//! photodiode array, each with a rigid-body pose.
//!
//! Frame convention: z is the optical axis, pointing up from the photodiode
//! plane (z = 0) toward the LED plane. Light travels toward -z.

mod pose;

pub use pose::{LocalFrame, Placement, Pose};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optics::{LensElement, Vec3};

/// Square grid geometry shared by the LED and PD arrays.
pub trait ArrayGeometry {
    fn grid_n(&self) -> usize;
    fn element_size(&self) -> f64;
    fn gap(&self) -> f64;
    fn plane_z(&self) -> f64;

    fn count(&self) -> usize {
        self.grid_n() * self.grid_n()
    }

    fn pitch(&self) -> f64 {
        self.element_size() + self.gap()
    }

    fn center(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.plane_z())
    }

    /// Element center in the array's own (unposed) frame, row-major from -x,-y.
    fn local_center(&self, index: usize) -> Result<Vec3> {
        let n = self.grid_n();
        if index >= n * n {
            return Err(Error::IndexOutOfRange { index, count: n * n });
        }
        let half = (n as f64 - 1.0) / 2.0;
        let col = (index % n) as f64 - half;
        let row = (index / n) as f64 - half;
        Ok(Vec3::new(col * self.pitch(), row * self.pitch(), self.plane_z()))
    }
}

/// Center of element `index` after applying `pose` about the array center.
pub fn element_center<A: ArrayGeometry>(spec: &A, pose: &Pose, index: usize) -> Result<Vec3> {
    let local = spec.local_center(index)?;
    Ok(pose.placement(spec.center()).point_to_world(local))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedArraySpec {
    pub grid_n: usize,
    /// Side of the square emitter (mm).
    pub element_size: f64,
    pub gap: f64,
    pub plane_z: f64,
    /// Exponent of the cos^n radiant-intensity law; each LED emits unit power.
    pub lambertian_exponent: f64,
}

impl ArrayGeometry for LedArraySpec {
    fn grid_n(&self) -> usize {
        self.grid_n
    }
    fn element_size(&self) -> f64 {
        self.element_size
    }
    fn gap(&self) -> f64 {
        self.gap
    }
    fn plane_z(&self) -> f64 {
        self.plane_z
    }
}

impl LedArraySpec {
    /// Polar angle at which intensity drops to half its on-axis value (degrees).
    pub fn half_power_angle_deg(&self) -> f64 {
        half_power_angle_deg(self.lambertian_exponent)
    }
}

pub fn half_power_angle_deg(lambertian_exponent: f64) -> f64 {
    0.5f64.powf(1.0 / lambertian_exponent).acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdArraySpec {
    pub grid_n: usize,
    pub element_size: f64,
    pub gap: f64,
    #[serde(default)]
    pub plane_z: f64,
}

impl ArrayGeometry for PdArraySpec {
    fn grid_n(&self) -> usize {
        self.grid_n
    }
    fn element_size(&self) -> f64 {
        self.element_size
    }
    fn gap(&self) -> f64 {
        self.gap
    }
    fn plane_z(&self) -> f64 {
        self.plane_z
    }
}

impl PdArraySpec {
    /// Photodiode containing the local-frame point (x, y), if any. Points in
    /// the gaps or outside the grid return `None`.
    #[inline]
    pub fn index_at(&self, x: f64, y: f64) -> Option<usize> {
        let n = self.grid_n;
        let pitch = self.pitch();
        let span = n as f64 * pitch - self.gap;
        let u = x + span / 2.0;
        let v = y + span / 2.0;
        if u < 0.0 || v < 0.0 || u > span || v > span {
            return None;
        }
        let col = ((u / pitch) as usize).min(n - 1);
        let row = ((v / pitch) as usize).min(n - 1);
        let du = u - col as f64 * pitch;
        let dv = v - row as f64 * pitch;
        (du <= self.element_size && dv <= self.element_size).then_some(row * n + col)
    }
}

/// Which rigid unit a misalignment pose moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Transmitter,
    Receiver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub leds: LedArraySpec,
    /// Transmitter placement about the LED array center.
    #[serde(default)]
    pub transmitter_pose: Pose,
    /// Ordered from the LED side to the detector side.
    pub lenses: Vec<LensElement>,
    pub pds: PdArraySpec,
    /// Receiver placement about the PD array center.
    #[serde(default)]
    pub receiver_pose: Pose,
    /// When true the lens stack moves rigidly with the PD array.
    #[serde(default = "yes")]
    pub lenses_follow_receiver: bool,
    #[serde(default = "unit_index")]
    pub ambient_index: f64,
    /// Side of the square detector window recorded in spot maps (mm).
    #[serde(default = "default_window")]
    pub detector_window: f64,
}

fn yes() -> bool {
    true
}
fn unit_index() -> f64 {
    1.0
}
fn default_window() -> f64 {
    10.0
}

/// Lens stack index.
pub const DEFAULT_LENS_INDEX: f64 = 1.5168;

impl Default for Scene {
    fn default() -> Self {
        Scene::reference()
    }
}

impl Scene {
    /// The 4x4 desk link with the published lens coefficients.
    ///
    /// The convex lens sits above its back vertex at 50 mm and the concave
    /// lens below its front vertex at 30 mm, leaving a 20 mm air gap. The
    /// transmitter is mounted turned 180 degrees about the axis because the
    /// lens pair forms an inverted image; with this mount LED j lands on PD j.
    pub fn reference() -> Self {
        Scene::with_lens_alphas([0.036, 0.007, -0.08, 0.05], DEFAULT_LENS_INDEX)
    }

    pub fn with_lens_alphas(alphas: [f64; 4], index: f64) -> Self {
        let convex_t = 6.875;
        let concave_t = 2.0;
        Scene {
            leds: LedArraySpec {
                grid_n: 4,
                element_size: 10.0,
                gap: 10.0,
                plane_z: 5050.0,
                lambertian_exponent: 10.0,
            },
            transmitter_pose: Pose::rotation(Vec3::Z, 180.0),
            lenses: vec![
                LensElement::new("convex", alphas[0], alphas[1], 50.0 + convex_t, convex_t, index, 15.0),
                LensElement::new("concave", alphas[2], alphas[3], 30.0, concave_t, index, 10.0),
            ],
            pds: PdArraySpec { grid_n: 4, element_size: 0.6, gap: 0.1, plane_z: 0.0 },
            receiver_pose: Pose::IDENTITY,
            lenses_follow_receiver: true,
            ambient_index: 1.0,
            detector_window: 10.0,
        }
    }

    pub fn with_pd_grid(mut self, grid_n: usize) -> Self {
        self.pds.grid_n = grid_n;
        self
    }

    pub fn n_tx(&self) -> usize {
        self.leds.count()
    }

    pub fn n_rx(&self) -> usize {
        self.pds.count()
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.leds;
        if l.grid_n < 1 || !(l.element_size > 0.0) || !(l.gap >= 0.0) {
            return Err(Error::InvalidGeometry("LED array needs grid_n >= 1, size > 0, gap >= 0".into()));
        }
        if !(l.lambertian_exponent >= 1.0) {
            return Err(Error::InvalidGeometry("lambertian exponent must be >= 1".into()));
        }
        let p = &self.pds;
        if p.grid_n < 1 || !(p.element_size > 0.0) || !(p.gap >= 0.0) {
            return Err(Error::InvalidGeometry("PD array needs grid_n >= 1, size > 0, gap >= 0".into()));
        }
        if !(self.ambient_index >= 1.0) || !(self.detector_window > 0.0) {
            return Err(Error::InvalidGeometry("ambient index >= 1 and detector window > 0 required".into()));
        }
        for pose in [&self.transmitter_pose, &self.receiver_pose] {
            if !pose.translation.is_finite() || !pose.angle_deg.is_finite() {
                return Err(Error::InvalidGeometry("non-finite pose".into()));
            }
            if pose.angle_deg != 0.0 && !(pose.axis.norm() > 0.0) {
                return Err(Error::InvalidGeometry("rotation axis must be nonzero".into()));
            }
        }
        let mut above = l.plane_z;
        for lens in &self.lenses {
            lens.validate()?;
            if lens.top_z() >= above {
                return Err(Error::InvalidGeometry(format!(
                    "lens `{}` is not below the previous element",
                    lens.name
                )));
            }
            above = lens.bottom_z();
        }
        if p.plane_z >= above {
            return Err(Error::InvalidGeometry("PD plane must lie below the lens stack".into()));
        }
        Ok(())
    }

    /// Copy of the scene with `pose` applied on top of the target's placement.
    pub fn apply_pose(&self, target: Unit, pose: &Pose) -> Scene {
        let mut out = self.clone();
        if pose.is_identity() {
            return out;
        }
        match target {
            Unit::Transmitter => out.transmitter_pose = pose.compose_in(&self.transmitter_pose, self.leds.center()),
            Unit::Receiver => out.receiver_pose = pose.compose_in(&self.receiver_pose, self.pds.center()),
        }
        out
    }

    pub fn transmitter_placement(&self) -> Placement {
        self.transmitter_pose.placement(self.leds.center())
    }

    pub fn pd_placement(&self) -> Placement {
        self.receiver_pose.placement(self.pds.center())
    }

    /// Lens stack frame; pivots with the receiver when encapsulated.
    pub fn lens_placement(&self) -> Placement {
        if self.lenses_follow_receiver {
            self.pd_placement()
        } else {
            Placement::IDENTITY
        }
    }

    /// World-frame LED center.
    pub fn led_center(&self, index: usize) -> Result<Vec3> {
        element_center(&self.leds, &self.transmitter_pose, index)
    }

    /// World-frame PD center.
    pub fn pd_center(&self, index: usize) -> Result<Vec3> {
        element_center(&self.pds, &self.receiver_pose, index)
    }

    /// Short content hash of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scene serializes");
        let hash = Sha256::digest(&json);
        hex::encode(&hash[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_center_examples() {
        let s = Scene::reference();
        let c = element_center(&s.leds, &Pose::IDENTITY, 0).unwrap();
        assert_eq!(c, Vec3::new(-30.0, -30.0, 5050.0));
        let c = element_center(&s.pds, &Pose::IDENTITY, 5).unwrap();
        assert!((c - Vec3::new(-0.35, -0.35, 0.0)).norm() < 1e-12);
        let single = PdArraySpec { grid_n: 1, element_size: 3.0, gap: 9.0, plane_z: 2.0 };
        assert_eq!(element_center(&single, &Pose::IDENTITY, 0).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        assert!(matches!(
            element_center(&s.pds, &Pose::IDENTITY, 16),
            Err(Error::IndexOutOfRange { index: 16, count: 16 })
        ));
    }

    #[test]
    fn reference_scene_is_valid() {
        let s = Scene::reference();
        s.validate().unwrap();
        assert_eq!(s.lenses[0].back.vertex_z, 50.0);
        assert_eq!(s.lenses[1].front.vertex_z, 30.0);
        // mounted transmitter puts LED 0 at the +x,+y corner
        let c = s.led_center(0).unwrap();
        assert!((c - Vec3::new(30.0, 30.0, 5050.0)).norm() < 1e-9);
    }

    #[test]
    fn identity_pose_is_bit_identical() {
        let s = Scene::reference();
        assert_eq!(s.apply_pose(Unit::Receiver, &Pose::IDENTITY), s);
        assert_eq!(s.apply_pose(Unit::Transmitter, &Pose::IDENTITY), s);
    }

    #[test]
    fn receiver_translation_shifts_pds_and_lenses() {
        let s = Scene::reference();
        let moved = s.apply_pose(Unit::Receiver, &Pose::translation(Vec3::new(13.0, 0.0, 0.0)));
        for i in 0..16 {
            let d = moved.pd_center(i).unwrap() - s.pd_center(i).unwrap();
            assert!((d - Vec3::new(13.0, 0.0, 0.0)).norm() < 1e-12);
        }
        let v = moved.lens_placement().point_to_world(Vec3::new(0.0, 0.0, 30.0));
        assert!((v - Vec3::new(13.0, 0.0, 30.0)).norm() < 1e-12);
        let mut loose = s.clone();
        loose.lenses_follow_receiver = false;
        let moved = loose.apply_pose(Unit::Receiver, &Pose::translation(Vec3::new(13.0, 0.0, 0.0)));
        assert!(moved.lens_placement().is_identity());
    }

    #[test]
    fn receiver_rotation_tilts_normal() {
        let s = Scene::reference().apply_pose(Unit::Receiver, &Pose::rotation(Vec3::X, 1.0));
        let n = s.pd_placement().dir_to_world(Vec3::Z);
        assert!((n.dot(Vec3::Z).acos().to_degrees() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pd_lookup() {
        let p = PdArraySpec { grid_n: 4, element_size: 0.6, gap: 0.1, plane_z: 0.0 };
        assert_eq!(p.index_at(-1.05, -1.05), Some(0));
        assert_eq!(p.index_at(0.35, 0.35), Some(10));
        assert_eq!(p.index_at(0.0, 0.0), None, "center of a 4x4 grid is a gap");
        assert_eq!(p.index_at(1.36, 0.35), None);
        assert_eq!(p.index_at(1.349, 1.349), Some(15));
        for i in 0..16 {
            let c = p.local_center(i).unwrap();
            assert_eq!(p.index_at(c.x, c.y), Some(i));
        }
    }

    #[test]
    fn half_power_angle_for_cn_10() {
        assert!((half_power_angle_deg(10.0) - 21.0).abs() < 0.1);
        assert!((half_power_angle_deg(1.0) - 60.0).abs() < 1e-9);
    }

    #[test]
    fn digest_tracks_content() {
        let a = Scene::reference();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.lenses[0].refractive_index = 1.53;
        assert_ne!(a.digest(), b.digest());
    }
}
