//! SPAS: sampling inside a most promising area (MPA), shrinking-ball value
//! estimates, and an interpolating GP surrogate that picks the next
//! incumbent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::latin_hypercube_in;
use super::template::{argmax, PriorFit};
use super::trace::{Budget, Evaluator, OptimizationTrace};
use crate::error::{Error, Result};
use crate::gp::{maximize_in_box, GpPosterior, KernelFamily, MaternNu, MeanSpec, Posterior, PriorFamily};
use crate::linalg::dist;
use crate::sim::{Bounds, Dataset, ReplicationSet, SimulationModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpasConfig {
    /// Uniform candidates drawn from the MPA per iteration.
    pub candidates: usize,
    /// Replications per candidate and at the incumbent.
    pub reps: usize,
    /// Initial MPA half-width as a fraction of each box side; 0.5 is the
    /// whole box around its centre.
    pub initial_half_width: f64,
    /// Ball radius `r₀·k^(−γ)`; `r₀` is the initial MPA half-width
    /// (largest side) when unset.
    pub ball_r0: Option<f64>,
    pub ball_gamma: f64,
    /// Stop once every MPA half-width is below this fraction of its side.
    pub floor_fraction: f64,
    /// Start point; uniform in the box when unset.
    pub start: Option<Vec<f64>>,
    pub kernel: KernelFamily,
    pub grid_per_dim: usize,
    pub refit_growth: f64,
    pub restarts: usize,
}

impl Default for SpasConfig {
    fn default() -> Self {
        Self {
            candidates: 4,
            reps: 1,
            initial_half_width: 0.25,
            ball_r0: None,
            ball_gamma: 1.0 / 3.0,
            floor_fraction: 1e-3,
            start: None,
            kernel: KernelFamily::Matern { nu: MaternNu::FiveHalves },
            grid_per_dim: 64,
            refit_growth: 1.5,
            restarts: 2,
        }
    }
}

/// Average of every output observed within `radius` of `x`, or `None`
/// when the ball is empty. The mean is taken relative to the first output
/// in the ball, so identical outputs are reproduced exactly.
pub fn shrinking_ball_estimate(samples: &[ReplicationSet], x: &[f64], radius: f64) -> Option<f64> {
    let mut anchor = None;
    let mut shift = 0.0;
    let mut count = 0usize;
    for s in samples.iter().filter(|s| dist(&s.point, x) <= radius) {
        for &y in &s.outputs {
            let a = *anchor.get_or_insert(y);
            shift += y - a;
            count += 1;
        }
    }
    anchor.map(|a| a + shift / count as f64)
}

/// State after each SPAS iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SpasIteration {
    pub incumbent: Vec<f64>,
    pub half_width: Vec<f64>,
    pub ball_radius: f64,
    /// Surrogate value at the previous and at the new incumbent.
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpasReport {
    pub trace: OptimizationTrace,
    pub iterations: Vec<SpasIteration>,
}

fn mpa(bounds: &Bounds, center: &[f64], half: &[f64]) -> Bounds {
    let lower = center.iter().zip(half).zip(&bounds.lower).map(|((c, h), l)| (c - h).max(*l)).collect();
    let upper = center.iter().zip(half).zip(&bounds.upper).map(|((c, h), u)| (c + h).min(*u)).collect();
    Bounds::new(lower, upper).expect("MPA lies inside a valid box")
}

fn push_set(sets: &mut Vec<ReplicationSet>, s: ReplicationSet) {
    match sets.iter_mut().find(|q| q.point == s.point) {
        Some(q) => q.merge(s),
        None => sets.push(s),
    }
}

/// Run SPAS until the budget is spent or the MPA collapses.
pub fn spas_run(model: &dyn SimulationModel, cfg: &SpasConfig, budget: Budget, seed: u64) -> Result<SpasReport> {
    let bounds = model.bounds().clone();
    let d = model.dimension();
    let widths = bounds.widths();
    if cfg.candidates == 0 || cfg.reps == 0 || !(cfg.initial_half_width > 0.0) || !(cfg.ball_gamma > 0.0) {
        return Err(Error::Domain("SPAS needs candidates ≥ 1, reps ≥ 1, a positive half-width and γ > 0".into()));
    }
    let per_iter = ((cfg.candidates + 1) * cfg.reps) as u64;
    if per_iter > budget.max_evaluations() {
        return Err(Error::Budget { requested: per_iter, remaining: budget.max_evaluations() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut incumbent = match &cfg.start {
        Some(x) if bounds.contains(x) => x.clone(),
        Some(x) => return Err(Error::Infeasible { point: x.clone() }),
        None => (0..d).map(|i| rng.random_range(bounds.lower[i]..=bounds.upper[i])).collect(),
    };
    let mut half: Vec<f64> = widths.iter().map(|w| cfg.initial_half_width * w).collect();
    let r0 = cfg.ball_r0.unwrap_or_else(|| half.iter().copied().fold(0.0, f64::max));
    let floors: Vec<f64> = widths.iter().map(|w| cfg.floor_fraction * w).collect();
    let mut ev = Evaluator::new(model, budget, seed);
    let mut samples: Vec<ReplicationSet> = Vec::new();
    let mut fit = PriorFit::new(PriorFamily::new(cfg.kernel.clone(), MeanSpec::FittedConstant));
    let mut iterations = Vec::new();
    let mut estimate = f64::NAN;
    let mut converged = false;
    let mut k = 0usize;
    loop {
        if half.iter().zip(&floors).all(|(h, f)| h < f) {
            converged = true;
            break;
        }
        if ev.remaining() < per_iter {
            break;
        }
        k += 1;
        ev.next_iteration();
        let region = mpa(&bounds, &incumbent, &half);
        for _ in 0..cfg.candidates {
            let x: Vec<f64> = (0..d).map(|i| rng.random_range(region.lower[i]..=region.upper[i])).collect();
            push_set(&mut samples, ev.simulate(&x, cfg.reps, None)?);
        }
        push_set(&mut samples, ev.simulate(&incumbent, cfg.reps, None)?);

        let radius = r0 * (k as f64).powf(-cfg.ball_gamma);
        let points: Vec<Vec<f64>> = samples.iter().map(|s| s.point.to_vec()).collect();
        let estimates: Vec<f64> =
            points.iter().map(|p| shrinking_ball_estimate(&samples, p, radius).expect("own outputs")).collect();
        let data = Dataset::from_points(&points, &estimates, 0.0)?;
        let prior = fit.refresh(&data, &widths, cfg.refit_growth, cfg.restarts, &mut rng)?;
        let post = GpPosterior::new(prior, data)?;

        let mut cands: Vec<Vec<f64>> = points.iter().filter(|p| region.contains(p)).cloned().collect();
        cands.extend(latin_hypercube_in(cfg.grid_per_dim * d, &region, &mut rng));
        let vals = cands.iter().map(|c| post.mean_at(c)).collect::<Result<Vec<_>>>()?;
        let i = argmax(&vals);
        let f = |x: &[f64]| post.mean_at(x).unwrap_or(f64::NEG_INFINITY);
        let (polished, fp) = maximize_in_box(&f, &region.lower, &region.upper, &cands[i], 100);
        let before = post.mean_at(&incumbent)?;
        let next = if fp >= vals[i] { polished } else { cands[i].clone() };
        let next = if f(&next) >= before { next } else { incumbent.clone() };

        let after = post.mean_at(&next)?;
        let improved = after > before;
        if !improved {
            for h in half.iter_mut() {
                *h *= 0.5;
            }
        }
        incumbent = next;
        estimate = after;
        ev.set_incumbent(&incumbent, estimate);
        iterations.push(SpasIteration {
            incumbent: incumbent.clone(),
            half_width: half.clone(),
            ball_radius: radius,
            surrogate_before: before,
            surrogate_after: after,
            improved,
        });
    }
    let trace = ev.finish("spas", incumbent, estimate, false, converged);
    Ok(SpasReport { trace, iterations })
}
