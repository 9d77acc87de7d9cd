//! JSON run configuration. Unknown keys are rejected and every error names
//! the key path it came from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lensopt::OptOptions;
use crate::scene::Scene;
use crate::sigproc::{Mode, DEFAULT_SUBSET};
use crate::sweeps::{Offset, SweepSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scene: Scene,
    pub rays_per_led: usize,
    pub seed: u64,
    /// Receiver noise variance; calibrated on the aligned channel when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    pub modes: Vec<Mode>,
    pub subset_size: usize,
    /// Offsets evaluated by `capacity`.
    pub offsets: Vec<Offset>,
    pub sweeps: Vec<SweepSpec>,
    pub optimizer: OptOptions,
    pub output_dir: String,
    /// Spot-map rows written per source.
    pub spot_export_limit: usize,
    pub n_symbols: usize,
    /// Condition-number threshold for movable ranges.
    pub kappa_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scene: Scene::reference(),
            rays_per_led: 200_000,
            seed: 1,
            noise_variance: None,
            modes: Mode::ALL.to_vec(),
            subset_size: DEFAULT_SUBSET,
            offsets: Vec::new(),
            sweeps: Vec::new(),
            optimizer: OptOptions::default(),
            output_dir: ".".into(),
            spot_export_limit: 5000,
            n_symbols: 100_000,
            kappa_threshold: 10.0,
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        for (path, v) in [
            ("scene.leds.element_size", s.leds.element_size),
            ("scene.pds.element_size", s.pds.element_size),
            ("scene.detector_window", s.detector_window),
        ] {
            if !(v > 0.0) {
                return Err(invalid(path, format!("must be positive, got {v}")));
            }
        }
        for (path, v) in [("scene.leds.gap", s.leds.gap), ("scene.pds.gap", s.pds.gap)] {
            if !(v >= 0.0) {
                return Err(invalid(path, format!("must be nonnegative, got {v}")));
            }
        }
        for (path, n) in [("scene.leds.grid_n", s.leds.grid_n), ("scene.pds.grid_n", s.pds.grid_n)] {
            if n == 0 {
                return Err(invalid(path, "must be at least 1"));
            }
        }
        if !(s.leds.lambertian_exponent >= 1.0) {
            return Err(invalid(
                "scene.leds.lambertian_exponent",
                format!("must be >= 1, got {}", s.leds.lambertian_exponent),
            ));
        }
        for (i, lens) in s.lenses.iter().enumerate() {
            for (key, v) in [
                ("center_thickness", lens.center_thickness),
                ("aperture_diameter", lens.aperture_diameter),
                ("front.aperture_radius", lens.front.aperture_radius),
                ("back.aperture_radius", lens.back.aperture_radius),
            ] {
                if !(v > 0.0) {
                    return Err(invalid(&format!("scene.lenses[{i}].{key}"), format!("must be positive, got {v}")));
                }
            }
            if let Err(e) = lens.validate() {
                return Err(invalid(&format!("scene.lenses[{i}]"), e.to_string()));
            }
        }
        s.validate().map_err(|e| invalid("scene", e.to_string()))?;
        if let Some(v) = self.noise_variance {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid("noise_variance", format!("must be positive, got {v}")));
            }
        }
        if self.rays_per_led == 0 {
            return Err(invalid("rays_per_led", "must be at least 1"));
        }
        if self.subset_size == 0 {
            return Err(invalid("subset_size", "must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(invalid("modes", "needs at least one mode"));
        }
        if self.n_symbols == 0 {
            return Err(invalid("n_symbols", "must be at least 1"));
        }
        if !(self.kappa_threshold >= 1.0) {
            return Err(invalid("kappa_threshold", "must be >= 1"));
        }
        for (i, sw) in self.sweeps.iter().enumerate() {
            if let Some(v) = sw.noise_variance {
                if !(v > 0.0) {
                    return Err(invalid(&format!("sweeps[{i}].noise_variance"), "must be positive"));
                }
            }
            sw.validate().map_err(|e| invalid(&format!("sweeps[{i}]"), e.to_string()))?;
        }
        if self.optimizer.max_evals == 0 {
            return Err(invalid("optimizer.max_evals", "must be at least 1"));
        }
        if self.optimizer.rays_per_led == 0 {
            return Err(invalid("optimizer.rays_per_led", "must be at least 1"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse and validate configuration text.
pub fn parse_config_str(text: &str) -> Result<SimConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config { path, message: e.into_inner().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ArrayGeometry;

    #[test]
    fn default_config_matches_reference_layout() {
        let cfg = parse_config_str("{}").unwrap();
        let s = &cfg.scene;
        assert_eq!((s.leds.grid_n, s.leds.element_size, s.leds.gap, s.leds.plane_z), (4, 10.0, 10.0, 5050.0));
        assert_eq!((s.pds.grid_n, s.pds.element_size, s.pds.gap), (4, 0.6, 0.1));
        assert_eq!(s.lenses[0].aperture_diameter, 15.0);
        assert_eq!(s.lenses[0].back.vertex_z, 50.0);
        assert_eq!(s.lenses[1].aperture_diameter, 10.0);
        assert_eq!(s.lenses[1].front.vertex_z, 30.0);
        assert!((s.leds.half_power_angle_deg() - 21.0).abs() < 0.1);
        assert_eq!(s.pds.count(), 16);
    }

    #[test]
    fn round_trip_materializes_defaults() {
        let cfg = parse_config_str(r#"{"seed": 7, "scene": {"leds": {"grid_n": 4, "element_size": 10, "gap": 10, "plane_z": 5050, "lambertian_exponent": 10}, "lenses": [], "pds": {"grid_n": 8, "element_size": 0.6, "gap": 0.1}}}"#).unwrap();
        assert_eq!(cfg.scene.pds.grid_n, 8);
        let again = parse_config_str(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
        let default = SimConfig::default();
        assert_eq!(parse_config_str(&default.to_json()).unwrap(), default);
    }

    #[test]
    fn errors_name_the_key_path() {
        let e = parse_config_str(r#"{"scene": {"leds": {"grid_n": 4, "bogus": 1}}}"#).unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "scene.leds.bogus"),
            other => panic!("{other:?}"),
        }
        let e = parse_config_str(r#"{"rays_per_led": "many"}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "rays_per_led"), "{e:?}");
        let e = parse_config_str(r#"{"noise_variance": 0}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "noise_variance"));
    }

    #[test]
    fn physical_validation() {
        let mut cfg = SimConfig::default();
        cfg.scene.leds.lambertian_exponent = 0.5;
        let e = parse_config_str(&cfg.to_json()).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "scene.leds.lambertian_exponent"));
        let mut cfg = SimConfig::default();
        cfg.scene.pds.element_size = -1.0;
        let e = parse_config_str(&cfg.to_json()).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "scene.pds.element_size"));
        let mut cfg = SimConfig::default();
        cfg.scene.leds.gap = -1.0;
        assert!(parse_config_str(&cfg.to_json()).is_err());
        cfg = SimConfig::default();
        cfg.scene.lenses[0].center_thickness = -2.0;
        assert!(parse_config_str(&cfg.to_json()).is_err());
    }

    #[test]
    fn empty_input_reports_position() {
        let e = parse_config_str("").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 1 column 0"), "{msg}");
    }
}
