//! Channel figures of merit: condition number, diagonal dominance and
//! detector-plane spot statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raytracer::{ChannelMatrix, SpotMap};

/// Below this the smallest singular value is treated as zero.
pub const RANK_EPS: f64 = 1e-300;

/// 2-norm condition number sigma_max / sigma_min of the thin singular
/// spectrum. Rank-deficient matrices give `f64::INFINITY`.
pub fn condition_number(h: &ChannelMatrix) -> Result<f64> {
    if h.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    Ok(matrix_condition_number(&h.to_dmatrix()))
}

pub fn matrix_condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min < RANK_EPS {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Rows of the strongest receiver for each transmitter, in transmitter order.
pub fn strongest_rows(h: &ChannelMatrix) -> Vec<usize> {
    (0..h.n_tx)
        .map(|j| {
            let mut best = 0;
            for m in 1..h.n_rx {
                if h.get(m, j) > h.get(best, j) {
                    best = m;
                }
            }
            best
        })
        .collect()
}

/// Condition number of the Nt x Nt matrix keeping, for each transmitter,
/// only its strongest receiver row. Equals the full value for square H
/// with a dominant diagonal.
pub fn square_condition_number(h: &ChannelMatrix) -> Result<f64> {
    if h.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    let rows = strongest_rows(h);
    let sub = DMatrix::from_fn(h.n_tx, h.n_tx, |r, c| h.get(rows[r], c));
    Ok(matrix_condition_number(&sub))
}

/// Minimum over rows of diagonal / largest off-diagonal entry.
pub fn diagonal_dominance(h: &ChannelMatrix) -> Result<f64> {
    if h.n_rx != h.n_tx {
        return Err(Error::NotSquare { rows: h.n_rx, cols: h.n_tx });
    }
    let mut worst = f64::INFINITY;
    for m in 0..h.n_rx {
        let off = (0..h.n_tx).filter(|&j| j != m).map(|j| h.get(m, j)).fold(0.0, f64::max);
        let ratio = if off == 0.0 { f64::INFINITY } else { h.get(m, m) / off };
        worst = worst.min(ratio);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotStats {
    pub source: usize,
    /// Weighted centroid (mm); absent when the source has no hits.
    pub centroid: Option<[f64; 2]>,
    /// 2 sqrt(E|p - c|^2) (mm).
    pub rms_diameter: Option<f64>,
    /// Power inside the detector window over the power launched.
    pub collected_fraction: f64,
    pub n_hits: usize,
}

pub fn spot_stats(spots: &SpotMap) -> Vec<SpotStats> {
    let n = spots.n_sources;
    let mut w = vec![0.0; n];
    let mut wx = vec![0.0; n];
    let mut wy = vec![0.0; n];
    let mut count = vec![0usize; n];
    for h in &spots.hits {
        w[h.source] += h.weight;
        wx[h.source] += h.weight * h.x;
        wy[h.source] += h.weight * h.y;
        count[h.source] += 1;
    }
    let centroids: Vec<Option<[f64; 2]>> =
        (0..n).map(|j| (w[j] > 0.0).then(|| [wx[j] / w[j], wy[j] / w[j]])).collect();
    let mut spread = vec![0.0; n];
    for h in &spots.hits {
        if let Some([cx, cy]) = centroids[h.source] {
            spread[h.source] += h.weight * ((h.x - cx).powi(2) + (h.y - cy).powi(2));
        }
    }
    (0..n)
        .map(|j| {
            let emitted = spots.emitted.get(j).copied().unwrap_or(0.0);
            SpotStats {
                source: j,
                centroid: centroids[j],
                rms_diameter: centroids[j].map(|_| 2.0 * (spread[j] / w[j]).sqrt()),
                collected_fraction: if emitted > 0.0 { (w[j] / emitted).min(1.0) } else { 0.0 },
                n_hits: count[j],
            }
        })
        .collect()
}
