//! Monte Carlo channel estimation: weighted rays from every LED are traced
//! through the lens stack onto the photodiode plane.
//!
//! Work is split into fixed-size batches, one ChaCha stream per
//! (seed, LED, batch). Batch partial sums are merged in index order, so the
//! result does not depend on how many worker threads ran.

mod emission;

pub use emission::{cone_mass, sample_direction, Cone, Emitter};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{refract, LensElement, Ray, Vec3};
use crate::scene::{ArrayGeometry, LocalFrame, Placement, Scene};

/// Rays per independent random stream.
pub const BATCH_SIZE: usize = 4096;
/// Widening applied to the cone circumscribing the first aperture.
pub const CONE_PAD: f64 = 1.1;
const RIM_SAMPLES: usize = 64;

/// Why a ray never reached the detector plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Missed a surface or was clipped by an aperture.
    Miss,
    TotalInternalReflection,
    /// Travelling away from the detector plane after the last surface.
    WrongWay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceOutcome {
    /// Hit on the detector plane, in the PD array's local frame (mm).
    Detected { x: f64, y: f64, weight: f64 },
    Lost(Loss),
}

/// Nr x Nt DC gain matrix with estimation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix {
    pub n_rx: usize,
    pub n_tx: usize,
    /// Row-major, `gains[m * n_tx + j]` is h_{m,j}.
    pub gains: Vec<f64>,
    /// Monte Carlo standard error of each entry.
    pub std_errors: Vec<f64>,
    /// Per transmitter: power fraction inside its sampling cone.
    pub cone_mass: Vec<f64>,
    /// Per transmitter: sampled power that reached no photodiode.
    pub lost: Vec<f64>,
    pub n_rays_per_led: usize,
    pub seed: u64,
    pub scene_digest: String,
}

impl ChannelMatrix {
    /// Matrix from rows (receivers) of gains, without estimation metadata.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rx = rows.len();
        let n_tx = rows.first().map_or(0, Vec::len);
        if n_rx == 0 || n_tx == 0 || rows.iter().any(|r| r.len() != n_tx) {
            return Err(Error::InvalidInput("channel matrix rows must be nonempty and equal length".into()));
        }
        if rows.iter().flatten().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidInput("channel gains must be finite and nonnegative".into()));
        }
        let gains: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut cone_mass = vec![0.0; n_tx];
        for (k, g) in gains.iter().enumerate() {
            cone_mass[k % n_tx] += g;
        }
        Ok(ChannelMatrix {
            n_rx,
            n_tx,
            std_errors: vec![0.0; gains.len()],
            gains,
            cone_mass,
            lost: vec![0.0; n_tx],
            n_rays_per_led: 0,
            seed: 0,
            scene_digest: String::new(),
        })
    }

    #[inline]
    pub fn get(&self, m: usize, j: usize) -> f64 {
        self.gains[m * self.n_tx + j]
    }

    pub fn std_error(&self, m: usize, j: usize) -> f64 {
        self.std_errors[m * self.n_tx + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rx).map(|m| self.get(m, j)).collect()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.gains[m * self.n_tx..(m + 1) * self.n_tx]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rx).map(|m| self.row(m).to_vec()).collect()
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n_rx).map(|m| self.get(m, j)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.gains.iter().all(|&g| g == 0.0)
    }

    /// Copy with every gain (and standard error) multiplied by `c`.
    pub fn scaled(&self, c: f64) -> ChannelMatrix {
        let mut out = self.clone();
        out.gains.iter_mut().for_each(|g| *g *= c);
        out.std_errors.iter_mut().for_each(|g| *g *= c);
        out
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n_rx, self.n_tx, &self.gains)
    }
}

/// One ray landing inside the detector window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotHit {
    pub source: usize,
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// Detector-plane hits per source, including rays that land in PD gaps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpotMap {
    pub n_sources: usize,
    /// Side of the square window centered on the PD array (mm).
    pub window: f64,
    /// Power launched per source (its cone mass).
    pub emitted: Vec<f64>,
    pub hits: Vec<SpotHit>,
}

impl SpotMap {
    pub fn hits_for(&self, source: usize) -> impl Iterator<Item = &SpotHit> {
        self.hits.iter().filter(move |h| h.source == source)
    }
}

/// Scene prepared for tracing: frames with cached inverses.
#[derive(Debug, Clone)]
pub struct Tracer {
    lenses: Vec<LensElement>,
    lens_frame: LocalFrame,
    lens_placement: Placement,
    pd_frame: LocalFrame,
    ambient_index: f64,
    pd_plane_z: f64,
}

impl Tracer {
    pub fn new(scene: &Scene) -> Self {
        let lens_placement = scene.lens_placement();
        Tracer {
            lenses: scene.lenses.clone(),
            lens_frame: lens_placement.local_frame(),
            lens_placement,
            pd_frame: scene.pd_placement().local_frame(),
            ambient_index: scene.ambient_index,
            pd_plane_z: scene.pds.plane_z,
        }
    }

    /// Propagate one world-frame ray to the detector plane.
    pub fn trace(&self, ray: &Ray) -> TraceOutcome {
        let mut r = Ray {
            origin: self.lens_frame.point(ray.origin),
            direction: self.lens_frame.dir(ray.direction),
            weight: ray.weight,
            medium_index: self.ambient_index,
        };
        for lens in &self.lenses {
            for (surface, next_index) in [(&lens.front, lens.refractive_index), (&lens.back, self.ambient_index)] {
                let Some(hit) = surface.intersect(&r) else {
                    return TraceOutcome::Lost(Loss::Miss);
                };
                let mut normal = surface.surface_normal(hit.point);
                if normal.dot(r.direction) > 0.0 {
                    normal = -normal;
                }
                match refract(r.direction, normal, r.medium_index, next_index) {
                    Ok(d) => r.direction = d,
                    Err(_) => return TraceOutcome::Lost(Loss::TotalInternalReflection),
                }
                r.origin = hit.point;
                r.medium_index = next_index;
            }
        }
        let (mut o, mut d) = (r.origin, r.direction);
        if !self.lens_placement.is_identity() {
            o = self.lens_placement.point_to_world(o);
            d = self.lens_placement.dir_to_world(d);
        }
        let o = self.pd_frame.point(o);
        let d = self.pd_frame.dir(d);
        if !(d.z < 0.0) {
            return TraceOutcome::Lost(Loss::WrongWay);
        }
        let t = (self.pd_plane_z - o.z) / d.z;
        if !(t > 0.0) {
            return TraceOutcome::Lost(Loss::WrongWay);
        }
        TraceOutcome::Detected { x: o.x + d.x * t, y: o.y + d.y * t, weight: r.weight }
    }
}

/// Trace a single ray through `scene`.
pub fn trace(ray: &Ray, scene: &Scene) -> TraceOutcome {
    Tracer::new(scene).trace(ray)
}

/// The LED at `index` with its sampling cone aimed at the first aperture
/// (or at the detector window when the scene has no lenses).
pub fn emitter(scene: &Scene, index: usize) -> Result<Emitter> {
    let tx = scene.transmitter_placement();
    let center = scene.led_center(index)?;
    let normal = tx.dir_to_world(Vec3::new(0.0, 0.0, -1.0));
    let u = tx.dir_to_world(Vec3::X);
    let v = tx.dir_to_world(Vec3::Y);
    let mut em = Emitter {
        index,
        center,
        normal,
        u,
        v,
        half_size: scene.leds.element_size / 2.0,
        lambertian_exponent: scene.leds.lambertian_exponent,
        cone: Cone::hemisphere(normal),
        cone_mass: 0.0,
    };
    let (aim, targets) = match scene.lenses.first() {
        Some(lens) => {
            let pl = scene.lens_placement();
            let s = &lens.front;
            let rad = s.aperture_radius;
            let rim_z = s.z_at(rad * rad);
            let mut pts: Vec<Vec3> = (0..RIM_SAMPLES)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / RIM_SAMPLES as f64;
                    pl.point_to_world(Vec3::new(rad * a.cos(), rad * a.sin(), rim_z))
                })
                .collect();
            // the rim and vertex planes bound the surface for monotone sag
            pts.extend((0..RIM_SAMPLES).map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / RIM_SAMPLES as f64;
                pl.point_to_world(Vec3::new(rad * a.cos(), rad * a.sin(), s.vertex_z))
            }));
            (pl.point_to_world(Vec3::new(0.0, 0.0, s.vertex_z)), pts)
        }
        None => {
            let pl = scene.pd_placement();
            let h = scene.detector_window / 2.0;
            let z = scene.pds.plane_z;
            let pts = [(-h, -h), (-h, h), (h, -h), (h, h)]
                .iter()
                .map(|&(x, y)| pl.point_to_world(Vec3::new(x, y, z)))
                .collect();
            (pl.point_to_world(scene.pds.center()), pts)
        }
    };
    em.cone = Cone::circumscribing(&em.corners(), &targets, center, aim, CONE_PAD)?;
    em.cone_mass = cone_mass(normal, em.lambertian_exponent, &em.cone);
    Ok(em)
}

#[derive(Debug, Default)]
struct BatchTally {
    sums: Vec<f64>,
    squares: Vec<f64>,
    lost: f64,
    spots: Vec<SpotHit>,
}

fn run_batch(
    tracer: &Tracer,
    scene: &Scene,
    em: &Emitter,
    weight: f64,
    count: usize,
    seed: u64,
    batch: usize,
    record_spots: bool,
) -> BatchTally {
    let n_rx = scene.n_rx();
    let mut tally = BatchTally { sums: vec![0.0; n_rx], squares: vec![0.0; n_rx], ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((em.index as u64) << 32) | batch as u64);
    let half = scene.detector_window / 2.0;
    for _ in 0..count {
        let ray = em.sample(&mut rng, weight);
        match tracer.trace(&ray) {
            TraceOutcome::Detected { x, y, weight: w } => {
                match scene.pds.index_at(x, y) {
                    Some(m) => {
                        tally.sums[m] += w;
                        tally.squares[m] += w * w;
                    }
                    None => tally.lost += w,
                }
                if record_spots && x.abs() <= half && y.abs() <= half {
                    tally.spots.push(SpotHit { source: em.index, x, y, weight: w });
                }
            }
            TraceOutcome::Lost(_) => tally.lost += weight,
        }
    }
    tally
}

fn estimate(scene: &Scene, n_rays_per_led: usize, seed: u64, record_spots: bool) -> Result<(ChannelMatrix, SpotMap)> {
    if n_rays_per_led == 0 {
        return Err(Error::InvalidInput("n_rays_per_led must be at least 1".into()));
    }
    scene.validate()?;
    let n_tx = scene.n_tx();
    let n_rx = scene.n_rx();
    let emitters = (0..n_tx).map(|j| emitter(scene, j)).collect::<Result<Vec<_>>>()?;
    let tracer = Tracer::new(scene);
    let n_batches = n_rays_per_led.div_ceil(BATCH_SIZE);
    let tasks: Vec<(usize, usize)> = (0..n_tx)
        .filter(|&j| emitters[j].cone_mass > 0.0)
        .flat_map(|j| (0..n_batches).map(move |b| (j, b)))
        .collect();
    let tallies: Vec<BatchTally> = tasks
        .par_iter()
        .map(|&(j, b)| {
            let em = &emitters[j];
            let count = BATCH_SIZE.min(n_rays_per_led - b * BATCH_SIZE);
            let weight = em.cone_mass / n_rays_per_led as f64;
            run_batch(&tracer, scene, em, weight, count, seed, b, record_spots)
        })
        .collect();

    let mut gains = vec![0.0; n_rx * n_tx];
    let mut squares = vec![0.0; n_rx * n_tx];
    let mut lost = vec![0.0; n_tx];
    let mut spots = SpotMap {
        n_sources: n_tx,
        window: scene.detector_window,
        emitted: emitters.iter().map(|e| e.cone_mass).collect(),
        hits: Vec::new(),
    };
    for (&(j, _), tally) in tasks.iter().zip(tallies) {
        for m in 0..n_rx {
            gains[m * n_tx + j] += tally.sums[m];
            squares[m * n_tx + j] += tally.squares[m];
        }
        lost[j] += tally.lost;
        spots.hits.extend(tally.spots);
    }
    let n = n_rays_per_led as f64;
    let std_errors = gains
        .iter()
        .zip(&squares)
        .map(|(&s, &q)| {
            if n_rays_per_led < 2 {
                return 0.0;
            }
            let var = ((q - s * s / n) / (n - 1.0)).max(0.0);
            (n * var).sqrt()
        })
        .collect();
    let h = ChannelMatrix {
        n_rx,
        n_tx,
        gains,
        std_errors,
        cone_mass: spots.emitted.clone(),
        lost,
        n_rays_per_led,
        seed,
        scene_digest: scene.digest(),
    };
    Ok((h, spots))
}

/// Channel matrix and spot map for `scene`.
pub fn estimate_channel(scene: &Scene, n_rays_per_led: usize, seed: u64) -> Result<(ChannelMatrix, SpotMap)> {
    estimate(scene, n_rays_per_led, seed, true)
}

/// Channel matrix only; skips spot recording.
pub fn estimate_gains(scene: &Scene, n_rays_per_led: usize, seed: u64) -> Result<ChannelMatrix> {
    estimate(scene, n_rays_per_led, seed, false).map(|(h, _)| h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Pose, Unit};

    #[test]
    fn axial_ray_lands_at_origin() {
        let s = Scene::reference();
        let ray = Ray::new(Vec3::new(0.0, 0.0, 5050.0), Vec3::new(0.0, 0.0, -1.0), 1.0);
        match trace(&ray, &s) {
            TraceOutcome::Detected { x, y, weight } => {
                assert!(x.abs() < 1e-12 && y.abs() < 1e-12);
                assert_eq!(weight, 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ray_outside_convex_aperture_is_lost() {
        let s = Scene::reference();
        let ray = Ray::new(Vec3::new(8.0, 0.0, 100.0), Vec3::new(0.0, 0.0, -1.0), 1.0);
        assert_eq!(trace(&ray, &s), TraceOutcome::Lost(Loss::Miss));
    }

    #[test]
    fn lensless_scene_is_straight_line() {
        let mut s = Scene::reference();
        s.lenses.clear();
        let (tx, ty) = (0.002f64, -0.001f64);
        let d = Vec3::new(tx.tan(), ty.tan(), -1.0);
        let ray = Ray::new(Vec3::new(0.0, 0.0, 5050.0), d, 1.0);
        match trace(&ray, &s) {
            TraceOutcome::Detected { x, y, .. } => {
                assert!((x - 5050.0 * tx.tan()).abs() < 1e-9);
                assert!((y - 5050.0 * ty.tan()).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn energy_is_conserved_exactly() {
        let s = Scene::reference();
        let h = estimate_gains(&s, 5000, 1).unwrap();
        for j in 0..h.n_tx {
            let total = h.column_sum(j) + h.lost[j];
            assert!((total - h.cone_mass[j]).abs() < 1e-12, "{total} vs {}", h.cone_mass[j]);
            assert!(h.column_sum(j) <= 1.0);
        }
        assert!(h.gains.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn estimate_is_deterministic() {
        let s = Scene::reference();
        let a = estimate_gains(&s, 3000, 9).unwrap();
        let b = estimate_gains(&s, 3000, 9).unwrap();
        assert_eq!(a, b);
        let c = estimate_gains(&s, 3000, 10).unwrap();
        assert_ne!(a.gains, c.gains);
    }

    #[test]
    fn zero_rays_rejected() {
        assert!(matches!(estimate_gains(&Scene::reference(), 0, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn cone_mass_matches_aperture_solid_angle() {
        // tiny cone on axis: mass ~ (cn+1) * half_angle^2 / 2 * cos^cn(0)
        let mut s = Scene::reference();
        s.transmitter_pose = Pose::IDENTITY;
        s.leds.grid_n = 1;
        let em = emitter(&s, 0).unwrap();
        let a = em.cone.half_angle;
        let approx = (s.leds.lambertian_exponent + 1.0) * a * a / 2.0;
        assert!((em.cone_mass / approx - 1.0).abs() < 1e-4);
        // the cone covers the aperture seen from the LED corner
        let seen = ((7.5f64 + 5.0 * 2f64.sqrt()) / (5050.0 - 56.875)).atan();
        assert!(a > seen && a < 1.2 * seen);
    }

    #[test]
    fn far_tilted_transmitter_gives_zero_column() {
        let s = Scene::reference().apply_pose(Unit::Transmitter, &Pose::rotation(Vec3::X, 120.0));
        let h = estimate_gains(&s, 100, 1).unwrap();
        assert!(h.is_zero());
        assert!(h.cone_mass.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn spot_map_holds_window_hits_only() {
        let s = Scene::reference();
        let (h, spots) = estimate_channel(&s, 2000, 3).unwrap();
        assert_eq!(spots.n_sources, 16);
        assert!(spots.hits.iter().all(|p| p.x.abs() <= 5.0 && p.y.abs() <= 5.0 && p.weight >= 0.0));
        let on_pd: f64 = spots
            .hits
            .iter()
            .filter(|p| s.pds.index_at(p.x, p.y).is_some())
            .map(|p| p.weight)
            .sum();
        let total: f64 = h.gains.iter().sum();
        assert!((on_pd - total).abs() < 1e-12 * total.max(1e-30) + 1e-18);
    }
}
