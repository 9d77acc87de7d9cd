//! Published reference data for the 4x4 desk link.

use crate::lensopt::LensParams;
use crate::raytracer::ChannelMatrix;

/// Scale of the published matrix entries.
pub const PUBLISHED_SCALE: f64 = 1e-7;

/// Aligned channel gain matrix as published (rows PDs, columns LEDs), in
/// units of `PUBLISHED_SCALE`.
#[rustfmt::skip]
pub const PUBLISHED_ROWS: [[f64; 16]; 16] = [
    [445.88, 27.71, 11.90, 6.40, 27.69, 17.94, 9.75, 6.28, 11.10, 9.75, 7.57, 5.37, 6.37, 5.93, 5.01, 3.91],
    [31.94, 450.20, 29.00, 11.61, 18.14, 28.00, 17.75, 10.06, 10.18, 11.40, 9.67, 7.35, 5.98, 6.70, 6.20, 5.54],
    [12.05, 29.67, 451.72, 29.95, 9.80, 17.46, 28.14, 18.46, 7.56, 10.24, 10.99, 9.71, 4.75, 6.37, 6.55, 6.07],
    [5.95, 11.07, 27.88, 443.46, 6.47, 9.53, 17.06, 27.42, 5.21, 7.09, 9.23, 11.39, 3.79, 5.38, 5.94, 6.81],
    [31.40, 18.29, 9.97, 6.32, 450.96, 27.82, 10.62, 6.54, 29.00, 17.49, 10.35, 6.28, 11.61, 9.41, 7.07, 4.91],
    [19.04, 32.04, 18.73, 9.95, 31.03, 452.33, 29.08, 11.18, 18.54, 29.31, 18.15, 10.18, 9.64, 11.05, 9.81, 7.04],
    [9.56, 19.28, 31.43, 19.45, 11.98, 29.42, 452.16, 31.05, 10.28, 18.43, 28.87, 18.69, 7.09, 10.14, 11.35, 9.73],
    [5.88, 10.16, 18.47, 29.93, 6.55, 10.96, 27.64, 446.16, 6.32, 9.39, 17.47, 29.61, 5.42, 7.49, 9.21, 11.18],
    [11.37, 9.75, 6.90, 4.76, 28.46, 18.11, 9.66, 6.04, 453.32, 28.12, 11.88, 6.35, 30.28, 18.59, 9.76, 5.85],
    [10.39, 11.99, 10.33, 6.97, 18.61, 29.72, 18.08, 9.87, 30.34, 457.93, 29.33, 11.70, 18.94, 32.27, 18.73, 9.66],
    [7.14, 9.81, 11.29, 9.83, 9.63, 18.36, 29.46, 18.71, 11.31, 30.12, 456.41, 31.12, 9.62, 18.77, 31.58, 19.15],
    [5.20, 7.07, 9.66, 11.89, 6.03, 9.50, 17.86, 29.22, 6.56, 11.62, 27.06, 450.99, 6.00, 9.65, 17.78, 32.14],
    [6.68, 6.03, 5.12, 4.22, 11.45, 10.15, 7.41, 4.96, 28.72, 17.53, 9.39, 6.25, 447.29, 27.78, 10.68, 6.96],
    [5.77, 6.24, 5.77, 5.39, 9.73, 11.63, 9.86, 6.75, 18.46, 27.19, 17.89, 9.88, 31.15, 455.03, 28.76, 11.40],
    [5.09, 6.12, 6.70, 5.92, 6.74, 9.56, 11.35, 9.73, 9.79, 17.27, 27.15, 17.51, 10.93, 28.74, 447.49, 30.92],
    [4.10, 5.45, 5.95, 6.40, 5.35, 6.73, 9.47, 10.99, 6.13, 9.61, 17.48, 27.50, 6.64, 11.27, 28.23, 444.46],
];

/// The published matrix as a `ChannelMatrix` in absolute units.
pub fn published_matrix() -> ChannelMatrix {
    let rows: Vec<Vec<f64>> = PUBLISHED_ROWS.iter().map(|r| r.iter().map(|v| v * PUBLISHED_SCALE).collect()).collect();
    ChannelMatrix::from_rows(&rows).expect("published matrix is well formed")
}

/// Published lens coefficients (mm^-1).
pub const PUBLISHED_LENS: LensParams = LensParams {
    alpha_convex_front: 0.036,
    alpha_convex_back: 0.007,
    alpha_concave_front: -0.08,
    alpha_concave_back: 0.05,
};

/// Coefficients found by `lensopt::optimize` from `PUBLISHED_LENS` with index
/// 1.5168 (300 evaluations, 2e4 rays per LED, seed 2024). They trace to
/// kappa of about 1.65 at 2e5 rays per LED.
pub const OPTIMIZED: LensParams = LensParams {
    alpha_convex_front: 0.038114,
    alpha_convex_back: 0.0067113,
    alpha_concave_front: -0.097316,
    alpha_concave_back: 0.056033,
};

pub const CONDITION_NUMBER: f64 = 1.6622;
/// Aligned per-channel capacity without processing (bits/s/Hz).
pub const NO_PROCESSING_CAPACITY: f64 = 0.986;
/// Aligned capacity of the last channel decoded with combining and SIC.
pub const LAST_DECODED_CAPACITY: f64 = 20.917;
pub const MIN_COMBINED_SIC_CAPACITY: f64 = 3.918;
