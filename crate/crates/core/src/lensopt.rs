//! Nelder-Mead search over the four quadratic sag coefficients, minimizing
//! the condition number of the traced channel matrix.
//!
//! Every evaluation reuses the same seed, so the Monte Carlo objective is a
//! deterministic function of the parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanmetrics::condition_number;
use crate::error::{Error, Result};
use crate::raytracer::estimate_gains;
use crate::scene::Scene;

/// Objective value for infeasible or unusable parameters.
pub const PENALTY: f64 = 1e9;
/// Box constraint on every coefficient (mm^-1).
pub const ALPHA_BOUND: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensParams {
    pub alpha_convex_front: f64,
    pub alpha_convex_back: f64,
    pub alpha_concave_front: f64,
    pub alpha_concave_back: f64,
}

impl LensParams {
    pub fn to_array(self) -> [f64; 4] {
        [self.alpha_convex_front, self.alpha_convex_back, self.alpha_concave_front, self.alpha_concave_back]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        LensParams {
            alpha_convex_front: a[0],
            alpha_convex_back: a[1],
            alpha_concave_front: a[2],
            alpha_concave_back: a[3],
        }
    }

    /// Current coefficients of a two-lens scene.
    pub fn of_scene(scene: &Scene) -> Result<Self> {
        match scene.lenses.as_slice() {
            [a, b] => Ok(LensParams::from_array([a.front.alpha2, a.back.alpha2, b.front.alpha2, b.back.alpha2])),
            _ => Err(Error::InvalidInput(format!("expected 2 lenses, scene has {}", scene.lenses.len()))),
        }
    }

    /// `scene` with these coefficients substituted into its two lenses.
    pub fn apply(&self, scene: &Scene) -> Result<Scene> {
        let mut out = scene.clone();
        match out.lenses.as_mut_slice() {
            [a, b] => {
                a.front.alpha2 = self.alpha_convex_front;
                a.back.alpha2 = self.alpha_convex_back;
                b.front.alpha2 = self.alpha_concave_front;
                b.back.alpha2 = self.alpha_concave_back;
                Ok(out)
            }
            _ => Err(Error::InvalidInput(format!("expected 2 lenses, scene has {}", scene.lenses.len()))),
        }
    }

    pub fn in_bounds(&self) -> bool {
        self.to_array().iter().all(|a| a.is_finite() && a.abs() <= ALPHA_BOUND)
    }
}

/// Condition number of the channel traced with `params`, or `PENALTY`.
pub fn objective(params: &LensParams, template: &Scene, rays_per_led: usize, seed: u64) -> f64 {
    if !params.in_bounds() {
        return PENALTY;
    }
    let Ok(scene) = params.apply(template) else {
        return PENALTY;
    };
    if scene.validate().is_err() {
        return PENALTY;
    }
    match estimate_gains(&scene, rays_per_led, seed) {
        Ok(h) => match condition_number(&h) {
            Ok(k) if k.is_finite() => k.min(PENALTY),
            _ => PENALTY,
        },
        Err(_) => PENALTY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptOptions {
    pub max_evals: usize,
    /// Initial simplex edge, relative to each coefficient's magnitude.
    pub relative_step: f64,
    /// Edge used for coefficients that are zero (mm^-1).
    pub absolute_step: f64,
    /// Simplex diameter at which a run stops (mm^-1).
    pub tolerance: f64,
    pub restarts: usize,
    pub rays_per_led: usize,
    pub seed: u64,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            max_evals: 400,
            relative_step: 0.1,
            absolute_step: 0.005,
            tolerance: 1e-5,
            restarts: 2,
            rays_per_led: 20_000,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: LensParams,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best_params: LensParams,
    pub best_kappa: f64,
    pub evaluation_count: usize,
    /// Best vertex after each iteration; the first entry is the start point.
    pub trace: Vec<TraceEntry>,
}

struct Counter<'a> {
    template: &'a Scene,
    opts: &'a OptOptions,
    evals: usize,
}

impl Counter<'_> {
    fn remaining(&self) -> usize {
        self.opts.max_evals.saturating_sub(self.evals)
    }

    fn eval(&mut self, x: &[f64; 4]) -> f64 {
        self.evals += 1;
        objective(&LensParams::from_array(*x), self.template, self.opts.rays_per_led, self.opts.seed)
    }

    /// Evaluates up to the remaining budget in parallel; None where skipped.
    fn eval_many(&mut self, xs: &[[f64; 4]]) -> Vec<Option<f64>> {
        let n = xs.len().min(self.remaining());
        self.evals += n;
        let (t, o) = (self.template, self.opts);
        let mut out: Vec<Option<f64>> = xs[..n]
            .par_iter()
            .map(|x| Some(objective(&LensParams::from_array(*x), t, o.rays_per_led, o.seed)))
            .collect();
        out.resize(xs.len(), None);
        out
    }
}

fn diameter(simplex: &[([f64; 4], f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(x, _)| x.iter().zip(best).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn sort_simplex(simplex: &mut [([f64; 4], f64)]) {
    // stable: equal values keep insertion order
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
}

fn lerp(a: &[f64; 4], b: &[f64; 4], t: f64) -> [f64; 4] {
    std::array::from_fn(|i| a[i] + t * (b[i] - a[i]))
}

/// Minimize the condition number from `initial`.
pub fn optimize(template: &Scene, initial: &LensParams, opts: &OptOptions) -> Result<OptResult> {
    if opts.max_evals == 0 {
        return Err(Error::InvalidInput("max_evals must be at least 1".into()));
    }
    let mut c = Counter { template, opts, evals: 0 };
    let x0 = initial.to_array();
    let f0 = c.eval(&x0);
    if f0 >= PENALTY {
        return Err(Error::InfeasibleStart(format!("{initial:?} gives invalid geometry or an all-zero channel")));
    }
    let mut trace = vec![TraceEntry { iteration: 0, params: *initial, kappa: f0 }];
    let mut best = (x0, f0);
    let mut iteration = 0;

    for run in 0..=opts.restarts {
        if c.remaining() == 0 {
            break;
        }
        let start = best;
        let vertices: Vec<[f64; 4]> = (0..4)
            .map(|i| {
                let mut x = start.0;
                let step = if x[i] == 0.0 { opts.absolute_step } else { opts.relative_step * x[i].abs() };
                x[i] += step;
                x
            })
            .collect();
        let fs = c.eval_many(&vertices);
        let mut simplex: Vec<([f64; 4], f64)> = vec![start];
        for (x, f) in vertices.into_iter().zip(fs) {
            match f {
                Some(f) => simplex.push((x, f)),
                None => break,
            }
        }
        if simplex.len() < 5 {
            break;
        }
        sort_simplex(&mut simplex);

        while c.remaining() > 0 && diameter(&simplex) >= opts.tolerance {
            iteration += 1;
            let worst = simplex[4];
            let centroid: [f64; 4] = std::array::from_fn(|i| simplex[..4].iter().map(|(x, _)| x[i]).sum::<f64>() / 4.0);
            let xr = lerp(&centroid, &worst.0, -1.0);
            let fr = c.eval(&xr);
            if fr < simplex[0].1 {
                let xe = lerp(&centroid, &worst.0, -2.0);
                let fe = if c.remaining() > 0 { c.eval(&xe) } else { f64::INFINITY };
                simplex[4] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[3].1 {
                simplex[4] = (xr, fr);
            } else if c.remaining() > 0 {
                let (xc, fc) = if fr < worst.1 {
                    let x = lerp(&centroid, &xr, 0.5);
                    (x, c.eval(&x))
                } else {
                    let x = lerp(&centroid, &worst.0, 0.5);
                    (x, c.eval(&x))
                };
                if fc < worst.1.min(fr) {
                    simplex[4] = (xc, fc);
                } else {
                    let shrunk: Vec<[f64; 4]> = simplex[1..].iter().map(|(x, _)| lerp(&simplex[0].0, x, 0.5)).collect();
                    let fs = c.eval_many(&shrunk);
                    for (k, (x, f)) in shrunk.into_iter().zip(fs).enumerate() {
                        if let Some(f) = f {
                            simplex[k + 1] = (x, f);
                        }
                    }
                }
            }
            sort_simplex(&mut simplex);
            if simplex[0].1 < best.1 {
                best = simplex[0];
            }
            trace.push(TraceEntry { iteration, params: LensParams::from_array(best.0), kappa: best.1 });
        }
        if simplex[0].1 >= start.1 && run > 0 {
            break;
        }
    }
    Ok(OptResult {
        best_params: LensParams::from_array(best.0),
        best_kappa: best.1,
        evaluation_count: c.evals,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::PUBLISHED_LENS;

    fn small() -> OptOptions {
        OptOptions { max_evals: 30, rays_per_led: 1500, ..OptOptions::default() }
    }

    #[test]
    fn objective_is_deterministic_and_penalizes_bad_geometry() {
        let s = Scene::reference();
        let a = objective(&PUBLISHED_LENS, &s, 1000, 5);
        assert_eq!(a, objective(&PUBLISHED_LENS, &s, 1000, 5));
        assert!(a >= 1.0 && a < PENALTY);
        // a strongly bent back surface crosses the front surface
        let bad = LensParams { alpha_convex_back: -0.2, alpha_convex_front: 0.2, ..PUBLISHED_LENS };
        assert_eq!(objective(&bad, &s, 1000, 5), PENALTY);
        let out = LensParams { alpha_convex_front: 0.3, ..PUBLISHED_LENS };
        assert_eq!(objective(&out, &s, 1000, 5), PENALTY);
    }

    #[test]
    fn round_trip_through_scene() {
        let s = PUBLISHED_LENS.apply(&Scene::reference()).unwrap();
        assert_eq!(LensParams::of_scene(&s).unwrap(), PUBLISHED_LENS);
    }

    #[test]
    fn single_evaluation_returns_start() {
        let s = Scene::reference();
        let r = optimize(&s, &PUBLISHED_LENS, &OptOptions { max_evals: 1, ..small() }).unwrap();
        assert_eq!(r.evaluation_count, 1);
        assert_eq!(r.best_params, PUBLISHED_LENS);
        assert_eq!(r.best_kappa, objective(&PUBLISHED_LENS, &s, 1500, small().seed));
    }

    #[test]
    fn best_so_far_never_increases() {
        let s = Scene::reference();
        let r = optimize(&s, &PUBLISHED_LENS, &small()).unwrap();
        assert!(r.evaluation_count <= 30);
        assert!(r.trace.windows(2).all(|w| w[1].kappa <= w[0].kappa));
        assert_eq!(r.best_kappa, r.trace.iter().map(|t| t.kappa).fold(f64::INFINITY, f64::min));
        assert!(r.best_kappa <= r.trace[0].kappa);
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let bad = LensParams { alpha_convex_back: -0.2, alpha_convex_front: 0.2, ..PUBLISHED_LENS };
        assert!(matches!(
            optimize(&Scene::reference(), &bad, &small()),
            Err(Error::InfeasibleStart(_))
        ));
    }
}
