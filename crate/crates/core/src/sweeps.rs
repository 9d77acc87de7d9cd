//! Single-axis misalignment experiments: metrics versus translation or
//! rotation of the transmitter or the receiver unit.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanmetrics::{condition_number, diagonal_dominance, square_condition_number};
use crate::error::{Error, Result};
use crate::optics::Vec3;
use crate::raytracer::{estimate_gains, ChannelMatrix};
use crate::scene::{Pose, Scene, Unit};
use crate::sigproc::{calibrate_noise, evaluate_with, CapacityReport, Mode, CALIBRATION_TARGET, DEFAULT_SUBSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    TranslateX,
    TranslateY,
    TranslateZ,
    RotateX,
    RotateY,
    RotateZ,
}

impl Motion {
    pub fn name(self) -> &'static str {
        match self {
            Motion::TranslateX => "translate-x",
            Motion::TranslateY => "translate-y",
            Motion::TranslateZ => "translate-z",
            Motion::RotateX => "rotate-x",
            Motion::RotateY => "rotate-y",
            Motion::RotateZ => "rotate-z",
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Motion::RotateX | Motion::RotateY | Motion::RotateZ)
    }
}

impl FromStr for Motion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Motion> {
        match s {
            "translate-x" | "translate" => Ok(Motion::TranslateX),
            "translate-y" => Ok(Motion::TranslateY),
            "translate-z" => Ok(Motion::TranslateZ),
            "rotate-x" | "rotate" => Ok(Motion::RotateX),
            "rotate-y" => Ok(Motion::RotateY),
            "rotate-z" => Ok(Motion::RotateZ),
            _ => Err(Error::InvalidInput(format!("unknown motion `{s}`"))),
        }
    }
}

/// One misalignment: `value` mm or degrees of `motion` applied to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Offset {
    pub target: Unit,
    pub motion: Motion,
    pub value: f64,
    /// World-frame rotation pivot; the array center when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<Vec3>,
}

impl Offset {
    pub fn new(target: Unit, motion: Motion, value: f64) -> Self {
        Offset { target, motion, value, pivot: None }
    }

    pub fn pose(&self) -> Pose {
        let v = self.value;
        let pose = match self.motion {
            Motion::TranslateX => Pose::translation(Vec3::new(v, 0.0, 0.0)),
            Motion::TranslateY => Pose::translation(Vec3::new(0.0, v, 0.0)),
            Motion::TranslateZ => Pose::translation(Vec3::new(0.0, 0.0, v)),
            Motion::RotateX => Pose::rotation(Vec3::X, v),
            Motion::RotateY => Pose::rotation(Vec3::Y, v),
            Motion::RotateZ => Pose::rotation(Vec3::Z, v),
        };
        match self.pivot {
            Some(p) if self.motion.is_rotation() => pose.with_pivot(p),
            _ => pose,
        }
    }

    /// `scene` with this offset applied. Vertical transmitter motion
    /// changes the LED plane height.
    pub fn apply(&self, scene: &Scene) -> Scene {
        if self.target == Unit::Transmitter && self.motion == Motion::TranslateZ {
            let mut out = scene.clone();
            out.leds.plane_z += self.value;
            return out;
        }
        scene.apply_pose(self.target, &self.pose())
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self.target {
            Unit::Transmitter => "tx",
            Unit::Receiver => "rx",
        };
        write!(f, "{}-{}:{}", self.motion.name(), unit, self.value)
    }
}

impl FromStr for Offset {
    type Err = Error;
    /// `<motion>-<rx|tx>:<value>`, e.g. `rotate-rx:0` or `translate-x-rx:13`.
    fn from_str(s: &str) -> Result<Offset> {
        let bad = || Error::InvalidInput(format!("offset `{s}` is not <motion>-<rx|tx>:<value>"));
        let (head, value) = s.split_once(':').ok_or_else(bad)?;
        let (motion, unit) = head.rsplit_once('-').ok_or_else(bad)?;
        let target = match unit {
            "rx" => Unit::Receiver,
            "tx" => Unit::Transmitter,
            _ => return Err(bad()),
        };
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        Ok(Offset::new(target, motion.parse()?, value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ConditionNumber,
    CapacityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub target: Unit,
    pub motion: Motion,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_rays")]
    pub rays_per_led: usize,
    #[serde(default)]
    pub seed: u64,
    /// Calibrated on the unmoved scene when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<Vec3>,
    #[serde(default = "default_subset")]
    pub subset_size: usize,
}

fn default_metric() -> Metric {
    Metric::ConditionNumber
}
fn default_rays() -> usize {
    20_000
}
fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}
fn default_subset() -> usize {
    DEFAULT_SUBSET
}

impl SweepSpec {
    pub fn new(target: Unit, motion: Motion, start: f64, stop: f64, step: f64) -> Self {
        SweepSpec {
            target,
            motion,
            start,
            stop,
            step,
            metric: Metric::ConditionNumber,
            rays_per_led: default_rays(),
            seed: 0,
            noise_variance: None,
            modes: default_modes(),
            pivot: None,
            subset_size: DEFAULT_SUBSET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidInput("sweep step must be positive".into()));
        }
        if !(self.start <= self.stop) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::InvalidInput("sweep needs finite start <= stop".into()));
        }
        if self.rays_per_led == 0 {
            return Err(Error::InvalidInput("sweep ray budget must be at least 1".into()));
        }
        if (self.stop - self.start) / self.step > 100_000.0 {
            return Err(Error::InvalidInput("sweep has more than 100000 steps".into()));
        }
        Ok(())
    }

    /// start, start + step, ... up to stop inclusive.
    pub fn offsets(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }

    pub fn offset(&self, value: f64) -> Offset {
        Offset { target: self.target, motion: self.motion, value, pivot: self.pivot }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub offset: f64,
    /// Full-matrix condition number; absent when H is all zero.
    pub kappa: Option<f64>,
    pub square_kappa: Option<f64>,
    pub dominance: Option<f64>,
    /// Sampled power that reached no photodiode, over the sampled power.
    pub loss_fraction: f64,
    pub all_zero: bool,
    pub reports: Vec<CapacityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub noise_variance: Option<f64>,
    pub records: Vec<SweepRecord>,
}

fn loss_fraction(h: &ChannelMatrix) -> f64 {
    let mass: f64 = h.cone_mass.iter().sum();
    if mass > 0.0 {
        (h.lost.iter().sum::<f64>() / mass).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

fn record_for(h: &ChannelMatrix, offset: f64, spec: &SweepSpec, noise: Option<f64>) -> SweepRecord {
    let all_zero = h.is_zero();
    let mut rec = SweepRecord {
        offset,
        kappa: condition_number(h).ok(),
        square_kappa: square_condition_number(h).ok(),
        dominance: diagonal_dominance(h).ok(),
        loss_fraction: loss_fraction(h),
        all_zero,
        reports: Vec::new(),
        error: None,
    };
    if let (Metric::CapacityReport, Some(s2), false) = (spec.metric, noise, all_zero) {
        for &mode in &spec.modes {
            match evaluate_with(h, s2, mode, spec.subset_size) {
                Ok(r) => rec.reports.push(r),
                Err(e) => rec.error = Some(e.to_string()),
            }
        }
    }
    rec
}

/// Evaluates every offset independently; a failing step is recorded and
/// the sweep continues.
pub fn run_sweep(scene: &Scene, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    scene.validate()?;
    let noise = match (spec.metric, spec.noise_variance) {
        (Metric::CapacityReport, None) => {
            let h = estimate_gains(scene, spec.rays_per_led, spec.seed)?;
            Some(calibrate_noise(&h, CALIBRATION_TARGET)?)
        }
        (_, n) => n,
    };
    let records = spec
        .offsets()
        .par_iter()
        .map(|&v| {
            let moved = spec.offset(v).apply(scene);
            match estimate_gains(&moved, spec.rays_per_led, spec.seed) {
                Ok(h) => record_for(&h, v, spec, noise),
                Err(e) => SweepRecord {
                    offset: v,
                    kappa: None,
                    square_kappa: None,
                    dominance: None,
                    loss_fraction: 1.0,
                    all_zero: true,
                    reports: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepResult { spec: spec.clone(), noise_variance: noise, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovableRange {
    pub lower: f64,
    pub upper: f64,
}

impl MovableRange {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Largest interval around the aligned step with kappa <= `threshold`,
/// endpoints interpolated linearly in kappa. None when the aligned step
/// already exceeds the threshold.
pub fn movable_range(result: &SweepResult, threshold: f64) -> Result<Option<MovableRange>> {
    let recs = &result.records;
    let aligned = recs
        .iter()
        .position(|r| r.offset.abs() < 1e-9)
        .ok_or_else(|| Error::InvalidInput("sweep does not include the aligned offset 0".into()))?;
    let good = |k: Option<f64>| k.is_some_and(|k| k <= threshold);
    if !good(recs[aligned].kappa) {
        return Ok(None);
    }
    let edge = |from: usize, dir: isize| -> f64 {
        let mut i = from;
        loop {
            let next = i as isize + dir;
            if next < 0 || next as usize >= recs.len() {
                return recs[i].offset;
            }
            let n = next as usize;
            if !good(recs[n].kappa) {
                let (x0, k0) = (recs[i].offset, recs[i].kappa.unwrap());
                return match recs[n].kappa {
                    Some(k1) if k1.is_finite() && k1 > k0 => {
                        x0 + (threshold - k0) / (k1 - k0) * (recs[n].offset - x0)
                    }
                    _ => x0,
                };
            }
            i = n;
        }
    };
    Ok(Some(MovableRange { lower: edge(aligned, -1), upper: edge(aligned, 1) }))
}

/// First offset at which the channel collapses: H becomes all zero, or
/// kappa falls by more than half from the previous step.
pub fn collapse_offset(result: &SweepResult) -> Option<f64> {
    let recs = &result.records;
    for w in recs.windows(2) {
        if w[1].all_zero && !w[0].all_zero {
            return Some(w[1].offset);
        }
        if let (Some(a), Some(b)) = (w[0].kappa, w[1].kappa) {
            if b < 0.5 * a {
                return Some(w[1].offset);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub offset: Offset,
    pub mode: Mode,
    /// Per transmitter, in transmitter index order.
    pub capacity: Vec<f64>,
    pub sinr: Vec<f64>,
}

/// Per-channel capacities for each offset and mode.
pub fn capacity_table(
    scene: &Scene,
    offsets: &[Offset],
    modes: &[Mode],
    noise_variance: f64,
    rays_per_led: usize,
    seed: u64,
    subset_size: usize,
) -> Result<Vec<CapacityRow>> {
    let per_offset: Vec<Result<Vec<CapacityRow>>> = offsets
        .par_iter()
        .map(|off| {
            let h = estimate_gains(&off.apply(scene), rays_per_led, seed)?;
            capacity_rows(&h, off, modes, noise_variance, subset_size)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_offset {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Capacity rows for an already estimated channel.
pub fn capacity_rows(
    h: &ChannelMatrix,
    offset: &Offset,
    modes: &[Mode],
    noise_variance: f64,
    subset_size: usize,
) -> Result<Vec<CapacityRow>> {
    modes
        .iter()
        .map(|&mode| {
            if h.is_zero() {
                return Ok(CapacityRow { offset: *offset, mode, capacity: vec![0.0; h.n_tx], sinr: vec![0.0; h.n_tx] });
            }
            let r = evaluate_with(h, noise_variance, mode, subset_size)?;
            Ok(CapacityRow { offset: *offset, mode, capacity: r.capacity, sinr: r.sinr })
        })
        .collect()
}

/// Fewest channels whose summed capacity exceeds `fraction` of the total.
pub fn dominant_channel_count(capacity: &[f64], fraction: f64) -> usize {
    let total: f64 = capacity.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut sorted = capacity.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for (i, c) in sorted.iter().enumerate() {
        acc += c;
        if acc > fraction * total {
            return i + 1;
        }
    }
    sorted.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(offsets: &[f64], kappas: &[Option<f64>]) -> SweepResult {
        SweepResult {
            spec: SweepSpec::new(Unit::Receiver, Motion::TranslateX, offsets[0], *offsets.last().unwrap(), 1.0),
            noise_variance: None,
            records: offsets
                .iter()
                .zip(kappas)
                .map(|(&offset, &kappa)| SweepRecord {
                    offset,
                    kappa,
                    square_kappa: kappa,
                    dominance: None,
                    loss_fraction: 0.0,
                    all_zero: kappa.is_none(),
                    reports: vec![],
                    error: None,
                })
                .collect(),
        }
    }

    #[test]
    fn offset_parsing() {
        let o: Offset = "rotate-rx:0".parse().unwrap();
        assert_eq!(o, Offset::new(Unit::Receiver, Motion::RotateX, 0.0));
        let o: Offset = "translate-x-rx:13".parse().unwrap();
        assert_eq!(o, Offset::new(Unit::Receiver, Motion::TranslateX, 13.0));
        let o: Offset = "rotate-y-tx:-2.5".parse().unwrap();
        assert_eq!(o, Offset::new(Unit::Transmitter, Motion::RotateY, -2.5));
        assert!("rotate:1".parse::<Offset>().is_err());
        assert!("spin-rx:1".parse::<Offset>().is_err());
        assert_eq!(Offset::new(Unit::Transmitter, Motion::TranslateZ, 5.0).to_string(), "translate-z-tx:5");
    }

    #[test]
    fn vertical_transmitter_motion_moves_led_plane() {
        let s = Scene::reference();
        let moved = Offset::new(Unit::Transmitter, Motion::TranslateZ, -1000.0).apply(&s);
        assert_eq!(moved.leds.plane_z, 4050.0);
        assert_eq!(moved.transmitter_pose, s.transmitter_pose);
    }

    #[test]
    fn offsets_are_inclusive() {
        let s = SweepSpec::new(Unit::Receiver, Motion::RotateX, 0.0, 2.0, 0.5);
        assert_eq!(s.offsets(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let bad = SweepSpec { step: 0.0, ..s.clone() };
        assert!(bad.validate().is_err());
        let bad = SweepSpec { start: 3.0, ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn movable_range_examples() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let flat = fake(&xs, &[Some(5.0); 5]);
        assert_eq!(movable_range(&flat, 10.0).unwrap(), Some(MovableRange { lower: -2.0, upper: 2.0 }));
        let v = fake(&xs, &[Some(30.0), Some(8.0), Some(2.0), Some(6.0), Some(14.0)]);
        let r = movable_range(&v, 10.0).unwrap().unwrap();
        assert!((r.upper - 1.5).abs() < 1e-12);
        assert!((r.lower - (-1.0 - 2.0 / 22.0)).abs() < 1e-12);
        let high = fake(&xs, &[Some(1.0), Some(1.0), Some(20.0), Some(1.0), Some(1.0)]);
        assert_eq!(movable_range(&high, 10.0).unwrap(), None);
        let no_zero = fake(&[1.0, 2.0], &[Some(1.0), Some(1.0)]);
        assert!(movable_range(&no_zero, 10.0).is_err());
    }

    #[test]
    fn collapse_detection() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(collapse_offset(&fake(&xs, &[Some(2.0), Some(5.0), Some(40.0), Some(3.0)])), Some(3.0));
        assert_eq!(collapse_offset(&fake(&xs, &[Some(2.0), Some(5.0), None, None])), Some(2.0));
        assert_eq!(collapse_offset(&fake(&xs, &[Some(2.0), Some(2.1), Some(2.2), Some(2.3)])), None);
    }

    #[test]
    fn dominant_count() {
        assert_eq!(dominant_channel_count(&[10.0, 10.0, 10.0, 10.0, 0.1, 0.2], 0.9), 4);
        assert_eq!(dominant_channel_count(&[1.0; 16], 0.9), 15);
        assert_eq!(dominant_channel_count(&[0.0; 4], 0.9), 0);
    }

    #[test]
    fn sweep_is_reproducible_and_ordered() {
        let mut spec = SweepSpec::new(Unit::Receiver, Motion::TranslateX, 0.0, 2.0, 1.0);
        spec.rays_per_led = 500;
        spec.seed = 3;
        let s = Scene::reference();
        let a = run_sweep(&s, &spec).unwrap();
        let b = run_sweep(&s, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.iter().map(|r| r.offset).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
    }
}
