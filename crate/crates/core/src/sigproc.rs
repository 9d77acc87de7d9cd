//! Receiver processing: strongest-PD subsets, maximal-ratio combining,
//! power-ordered successive interference cancellation, SINR and capacity.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raytracer::ChannelMatrix;

/// Receivers combined per transmitter.
pub const DEFAULT_SUBSET: usize = 4;
/// Aligned no-processing capacity the noise level is calibrated against.
pub const CALIBRATION_TARGET: f64 = 0.986;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    NoProcessing,
    CombineOnly,
    SicOnly,
    CombineAndSic,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::NoProcessing, Mode::CombineOnly, Mode::SicOnly, Mode::CombineAndSic];

    pub fn combines(self) -> bool {
        matches!(self, Mode::CombineOnly | Mode::CombineAndSic)
    }

    pub fn cancels(self) -> bool {
        matches!(self, Mode::SicOnly | Mode::CombineAndSic)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::NoProcessing => "no_processing",
            Mode::CombineOnly => "combine_only",
            Mode::SicOnly => "sic_only",
            Mode::CombineAndSic => "combine_and_sic",
        }
    }

    /// Parses a comma-separated list; `all` expands to every mode.
    pub fn parse_list(s: &str) -> Result<Vec<Mode>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Mode::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("empty mode list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "no_processing" | "none" => Ok(Mode::NoProcessing),
            "combine_only" | "sc" => Ok(Mode::CombineOnly),
            "sic_only" | "sic" => Ok(Mode::SicOnly),
            "combine_and_sic" | "sc_sic" | "sc+sic" => Ok(Mode::CombineAndSic),
            _ => Err(Error::InvalidInput(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub target: usize,
    /// Length Nr; nonzero only on the selected receivers.
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn dot(&self, column: &[f64]) -> f64 {
        self.weights.iter().zip(column).map(|(w, h)| w * h).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingPlan {
    pub mode: Mode,
    pub decode_order: Vec<usize>,
    /// Empty for a transmitter that reaches no receiver.
    pub receiver_subsets: Vec<Vec<usize>>,
    pub weights: Vec<WeightVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub mode: Mode,
    pub noise_variance: f64,
    pub decode_order: Vec<usize>,
    /// Linear SINR per transmitter.
    pub sinr: Vec<f64>,
    /// bits/s/Hz per transmitter.
    pub capacity: Vec<f64>,
}

impl CapacityReport {
    pub fn total(&self) -> f64 {
        self.capacity.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.capacity.len() as f64
    }

    /// Capacity of the transmitter decoded last.
    pub fn last_decoded(&self) -> f64 {
        self.decode_order.last().map_or(0.0, |&j| self.capacity[j])
    }
}

/// Up to `k` receivers with the largest nonzero gain from transmitter `j`,
/// ties to the lower index, returned in ascending index order.
pub fn select_receivers(h: &ChannelMatrix, j: usize, k: usize) -> Result<Vec<usize>> {
    if j >= h.n_tx {
        return Err(Error::IndexOutOfRange { index: j, count: h.n_tx });
    }
    if k == 0 || k > h.n_rx {
        return Err(Error::InvalidInput(format!("subset size {k} must be in 1..={}", h.n_rx)));
    }
    let col = h.column(j);
    let mut idx: Vec<usize> = (0..h.n_rx).filter(|&m| col[m] > 0.0).collect();
    if idx.is_empty() {
        return Err(Error::EmptySubset(j));
    }
    idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// w_m = h_{m,j} / sum_{m' in subset} h_{m',j}^2 on the subset, zero elsewhere.
pub fn mrc_weights(h: &ChannelMatrix, j: usize, subset: &[usize]) -> Result<WeightVector> {
    if subset.is_empty() {
        return Err(Error::EmptySubset(j));
    }
    if let Some(&m) = subset.iter().find(|&&m| m >= h.n_rx) {
        return Err(Error::IndexOutOfRange { index: m, count: h.n_rx });
    }
    let denom: f64 = subset.iter().map(|&m| h.get(m, j).powi(2)).sum();
    if !(denom > 0.0) {
        return Err(Error::ZeroDenominator(j));
    }
    let mut weights = vec![0.0; h.n_rx];
    for &m in subset {
        weights[m] = h.get(m, j) / denom;
    }
    Ok(WeightVector { target: j, weights })
}

/// Decode order by combined signal power, strongest first, ties to the
/// lower index.
///
/// Power is measured as (w . h_j)^2 / |w|^2, which is invariant to the
/// weight normalization: it equals the sum of squared subset gains under
/// MRC and the strongest PD's squared gain for single-PD reception.
pub fn decode_order(h: &ChannelMatrix, weights: &[WeightVector]) -> Vec<usize> {
    let power: Vec<f64> = weights
        .iter()
        .map(|w| {
            let n = w.norm_sq();
            if n > 0.0 {
                w.dot(&h.column(w.target)).powi(2) / n
            } else {
                0.0
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| power[b].total_cmp(&power[a]).then(a.cmp(&b)));
    order
}

/// Receiver subsets, weights and decode order for `mode`. Transmitters
/// that reach no receiver get an empty subset and zero weights.
pub fn plan(h: &ChannelMatrix, mode: Mode, k: usize) -> Result<ProcessingPlan> {
    let size = if mode.combines() { k.min(h.n_rx) } else { 1 };
    let mut subsets = Vec::with_capacity(h.n_tx);
    let mut weights = Vec::with_capacity(h.n_tx);
    for j in 0..h.n_tx {
        match select_receivers(h, j, size) {
            Ok(s) => {
                weights.push(mrc_weights(h, j, &s)?);
                subsets.push(s);
            }
            Err(Error::EmptySubset(_)) => {
                weights.push(WeightVector { target: j, weights: vec![0.0; h.n_rx] });
                subsets.push(Vec::new());
            }
            Err(e) => return Err(e),
        }
    }
    let order = decode_order(h, &weights);
    Ok(ProcessingPlan { mode, decode_order: order, receiver_subsets: subsets, weights })
}

/// Ideal-cancellation SINR per transmitter with unit-power symbols.
pub fn sic_sinr(h: &ChannelMatrix, plan: &ProcessingPlan, noise_variance: f64) -> Vec<f64> {
    let columns: Vec<Vec<f64>> = (0..h.n_tx).map(|j| h.column(j)).collect();
    let mut sinr = vec![0.0; h.n_tx];
    for (p, &j) in plan.decode_order.iter().enumerate() {
        let w = &plan.weights[j];
        let n2 = w.norm_sq();
        if n2 == 0.0 {
            continue;
        }
        let signal = w.dot(&columns[j]).powi(2);
        let interference: f64 = if plan.mode.cancels() {
            plan.decode_order[p + 1..].iter().map(|&i| w.dot(&columns[i]).powi(2)).sum()
        } else {
            (0..h.n_tx).filter(|&i| i != j).map(|i| w.dot(&columns[i]).powi(2)).sum()
        };
        sinr[j] = signal / (interference + noise_variance * n2);
    }
    sinr
}

/// log2(1 + SINR) entry-wise.
pub fn capacity(sinr: &[f64]) -> Vec<f64> {
    sinr.iter().map(|s| s.max(0.0).ln_1p() / std::f64::consts::LN_2).collect()
}

pub fn evaluate(h: &ChannelMatrix, noise_variance: f64, mode: Mode) -> Result<CapacityReport> {
    evaluate_with(h, noise_variance, mode, DEFAULT_SUBSET)
}

pub fn evaluate_with(h: &ChannelMatrix, noise_variance: f64, mode: Mode, k: usize) -> Result<CapacityReport> {
    if !(noise_variance > 0.0) || !noise_variance.is_finite() {
        return Err(Error::InvalidInput(format!("noise variance must be positive, got {noise_variance}")));
    }
    if h.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    let p = plan(h, mode, k)?;
    let sinr = sic_sinr(h, &p, noise_variance);
    Ok(CapacityReport { mode, noise_variance, capacity: capacity(&sinr), sinr, decode_order: p.decode_order })
}

/// Noise variance at which the mean no-processing capacity of `h` equals
/// `target` bits/s/Hz, found by bisection in log space.
pub fn calibrate_noise(h: &ChannelMatrix, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidInput("calibration target must be positive".into()));
    }
    let mean_at = |s2: f64| evaluate(h, s2, Mode::NoProcessing).map(|r| r.mean());
    let scale = h.gains.iter().copied().fold(0.0, f64::max).powi(2);
    let (mut lo, mut hi) = ((scale * 1e-12).ln(), (scale * 1e12).ln());
    if mean_at(lo.exp())? < target {
        return Err(Error::InvalidInput(format!(
            "interference alone keeps mean capacity below {target}; cannot calibrate"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid.exp())? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolReport {
    pub n_symbols: usize,
    pub bit_errors: Vec<u64>,
    pub ber: Vec<f64>,
    /// (w . h_j)^2 over the empirical variance of the decision residual.
    pub realized_sinr: Vec<f64>,
}

const SYMBOL_BLOCK: usize = 1 << 14;

#[derive(Default, Clone)]
struct SymbolTally {
    errors: Vec<u64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

/// OOK symbols x in {0, 2} with Gaussian receiver noise, threshold
/// decisions at w . h_j and subtraction of decided (possibly wrong) symbols.
pub fn simulate_symbols(
    h: &ChannelMatrix,
    plan: &ProcessingPlan,
    noise_variance: f64,
    n_symbols: usize,
    seed: u64,
) -> Result<SymbolReport> {
    if n_symbols == 0 {
        return Err(Error::InvalidInput("n_symbols must be at least 1".into()));
    }
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidInput("noise variance must be nonnegative".into()));
    }
    let (nr, nt) = (h.n_rx, h.n_tx);
    let sigma = noise_variance.sqrt();
    let columns: Vec<Vec<f64>> = (0..nt).map(|j| h.column(j)).collect();
    let gains: Vec<f64> = (0..nt).map(|j| plan.weights[j].dot(&columns[j])).collect();
    let n_blocks = n_symbols.div_ceil(SYMBOL_BLOCK);
    let tallies: Vec<SymbolTally> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = SYMBOL_BLOCK.min(n_symbols - b * SYMBOL_BLOCK);
            let mut t = SymbolTally { errors: vec![0; nt], sum: vec![0.0; nt], sum_sq: vec![0.0; nt] };
            let mut x = vec![0.0; nt];
            let mut y = vec![0.0; nr];
            let mut decided = vec![0.0; nt];
            for _ in 0..count {
                for xi in x.iter_mut() {
                    *xi = if rng.random::<bool>() { 2.0 } else { 0.0 };
                }
                for (m, ym) in y.iter_mut().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *ym = (0..nt).map(|j| h.get(m, j) * x[j]).sum::<f64>() + sigma * noise;
                }
                for &j in &plan.decode_order {
                    let w = &plan.weights[j];
                    if gains[j] == 0.0 {
                        decided[j] = 0.0;
                        if x[j] != 0.0 {
                            t.errors[j] += 1;
                        }
                        continue;
                    }
                    let z = w.dot(&y);
                    decided[j] = if z > gains[j] { 2.0 } else { 0.0 };
                    if decided[j] != x[j] {
                        t.errors[j] += 1;
                    }
                    let resid = z - gains[j] * x[j];
                    t.sum[j] += resid;
                    t.sum_sq[j] += resid * resid;
                    if plan.mode.cancels() {
                        for (m, ym) in y.iter_mut().enumerate() {
                            *ym -= columns[j][m] * decided[j];
                        }
                    }
                }
            }
            t
        })
        .collect();
    let mut errors = vec![0u64; nt];
    let mut sum = vec![0.0; nt];
    let mut sum_sq = vec![0.0; nt];
    for t in tallies {
        for j in 0..nt {
            errors[j] += t.errors[j];
            sum[j] += t.sum[j];
            sum_sq[j] += t.sum_sq[j];
        }
    }
    let n = n_symbols as f64;
    let realized_sinr = (0..nt)
        .map(|j| {
            let var = (sum_sq[j] / n - (sum[j] / n).powi(2)).max(0.0);
            if gains[j] == 0.0 {
                0.0
            } else if var == 0.0 {
                f64::INFINITY
            } else {
                gains[j].powi(2) / var
            }
        })
        .collect();
    Ok(SymbolReport {
        n_symbols,
        ber: errors.iter().map(|&e| e as f64 / n).collect(),
        bit_errors: errors,
        realized_sinr,
    })
}
