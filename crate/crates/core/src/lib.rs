//! Simulator for an LED-array to photodiode-array optical MIMO link.
//!
//! The pipeline: [`scene`] describes the geometry, [`raytracer`] estimates the
//! channel gain matrix, [`chanmetrics`] scores it, [`lensopt`] tunes the lens
//! surfaces, [`sigproc`] evaluates receiver processing and [`sweeps`] runs
//! misalignment experiments. [`config`] and [`export`] handle file I/O.

pub mod chanmetrics;
pub mod config;
pub mod error;
pub mod export;
pub mod lensopt;
pub mod optics;
pub mod raytracer;
pub mod reference;
pub mod scene;
pub mod sigproc;
pub mod sweeps;

pub use error::{Error, Result};
