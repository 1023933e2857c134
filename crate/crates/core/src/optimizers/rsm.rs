//! Two-stage response surface methodology: steepest ascent on first-order
//! fits, then a second-order fit around the final centre.

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::design::{central_composite, fractional_factorial, scale_design};
use super::local::{trust_region_step, LocalModel};
use super::trace::{Budget, Evaluator, OptimizationTrace};
use crate::error::{Error, Result};
use crate::sim::{ReplicationSet, SimulationModel};
use crate::stats::mean;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsmConfig {
    /// Replications at each factorial or axial run.
    pub reps: usize,
    /// Replications at the design centre.
    pub center_reps: usize,
    /// Level of the lack-of-fit test that ends stage 1.
    pub alpha: f64,
    /// Line-search evaluations per stage-1 iteration.
    pub max_line_steps: usize,
    pub max_stage1_iterations: usize,
    /// Longest stage-2 move in coded units; `2√d` when unset.
    pub stage2_radius: Option<f64>,
    pub max_stage2_iterations: usize,
}

impl Default for RsmConfig {
    fn default() -> Self {
        Self {
            reps: 2,
            center_reps: 4,
            alpha: 0.05,
            max_line_steps: 20,
            max_stage1_iterations: 50,
            stage2_radius: None,
            max_stage2_iterations: 20,
        }
    }
}

/// How stage 2 chose its answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StationaryKind {
    /// Negative-definite fit: the stationary point is a maximum.
    Maximum,
    /// Indefinite fit, or a maximum too far out: best point of the fit on
    /// the stage-2 ball.
    Ridge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RsmReport {
    pub trace: OptimizationTrace,
    /// Distance moved by each stage-1 iteration.
    pub stage1_moves: Vec<f64>,
    pub lack_of_fit_pvalues: Vec<f64>,
    /// Distance moved by each stage-2 fit.
    pub stage2_moves: Vec<f64>,
    /// Last second-order fit and how its answer was chosen.
    pub stage2: Option<(LocalModel, StationaryKind)>,
}

struct Centre {
    x: Vec<f64>,
    outputs: Vec<f64>,
}

fn push_set(sets: &mut Vec<ReplicationSet>, s: ReplicationSet) {
    match sets.iter_mut().find(|q| q.point == s.point) {
        Some(q) => q.merge(s),
        None => sets.push(s),
    }
}

fn run_design(ev: &mut Evaluator<'_>, runs: &[Vec<f64>], centre: &mut Centre, step: f64, cfg: &RsmConfig) -> Result<Vec<ReplicationSet>> {
    let bounds = ev.model().bounds().clone();
    let points = scale_design(runs, &centre.x, step, &bounds);
    let cost = points.len() * cfg.reps + cfg.center_reps;
    if cost as u64 > ev.remaining() {
        return Err(Error::Budget { requested: cost as u64, remaining: ev.remaining() });
    }
    let mut sets = Vec::new();
    for p in &points {
        let s = ev.simulate(p, cfg.reps, None)?;
        push_set(&mut sets, s);
    }
    let c = ev.simulate(&centre.x, cfg.center_reps, None)?;
    centre.outputs.extend_from_slice(&c.outputs);
    push_set(&mut sets, c);
    Ok(sets)
}

/// Stage 1 iteration. Returns the lack-of-fit p-value and whether to
/// continue with first-order fits.
fn ascent(ev: &mut Evaluator<'_>, centre: &mut Centre, step: f64, cfg: &RsmConfig, moves: &mut Vec<f64>) -> Result<(f64, bool)> {
    let d = centre.x.len();
    let sets = run_design(ev, &fractional_factorial(d), centre, step, cfg)?;
    let fit = LocalModel::fit(&sets, &centre.x, step, 1)?;
    let p = fit.lack_of_fit_pvalue();
    let g = fit.gradient();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if p < cfg.alpha || norm <= 1e-12 * (1.0 + fit.b0.abs()) / step {
        moves.push(0.0);
        return Ok((p, false));
    }
    let dir: Vec<f64> = g.iter().map(|v| v / norm).collect();
    let bounds = ev.model().bounds().clone();
    let start = centre.x.clone();
    let mut best = (start.clone(), mean(&centre.outputs), centre.outputs.clone());
    let mut prev = best.1;
    for j in 1..=cfg.max_line_steps {
        let x = bounds.project(&start.iter().zip(&dir).map(|(s, u)| s + j as f64 * step * u).collect::<Vec<_>>());
        if x == best.0 || (cfg.center_reps as u64) > ev.remaining() {
            break;
        }
        let s = ev.simulate(&x, cfg.center_reps, Some(j as f64 * step))?;
        let y = mean(&s.outputs);
        if y > best.1 {
            best = (x, y, s.outputs);
        }
        if y <= prev {
            break;
        }
        prev = y;
    }
    let moved = best.0.iter().zip(&start).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    moves.push(moved);
    if moved > 0.0 {
        centre.x = best.0;
        centre.outputs = best.2;
    }
    Ok((p, moved > 0.0))
}

/// Maximizer of the quadratic fit: the stationary point when the fit is
/// concave and the point lies within `radius` (coded), otherwise the best
/// point of the fit on that ball. The flag is set when the answer lies
/// inside the design region.
fn stationary(fit: &LocalModel, bounds: &crate::sim::Bounds, radius: f64) -> (Vec<f64>, StationaryKind, bool) {
    let d = fit.g.len();
    let eig = SymmetricEigen::new(fit.h.clone());
    let scale_h = eig.eigenvalues.amax().max(1e-300);
    let mut best = None;
    if eig.eigenvalues.iter().all(|&l| l < -1e-10 * scale_h) {
        let q = &eig.eigenvectors;
        let gt = q.transpose() * &fit.g;
        let z = DVector::from_iterator(d, gt.iter().zip(eig.eigenvalues.iter()).map(|(a, l)| -a / l));
        let u = q * z;
        if u.norm() <= radius {
            best = Some((u, StationaryKind::Maximum));
        }
    }
    let (u, kind) = best.unwrap_or_else(|| (trust_region_step(&fit.g, &fit.h, radius), StationaryKind::Ridge));
    let inside = kind == StationaryKind::Maximum && u.norm() <= (d as f64).sqrt() * (1.0 + 1e-12);
    let x: Vec<f64> = fit.center.iter().zip(u.iter()).map(|(c, v)| c + fit.scale * v).collect();
    (bounds.project(&x), kind, inside)
}

/// Run both stages from `start` with stage-1 half-width `step`.
pub fn rsm_run(model: &dyn SimulationModel, start: &[f64], step: f64, budget: Budget, seed: u64, cfg: &RsmConfig) -> Result<RsmReport> {
    let bounds = model.bounds().clone();
    if start.len() != model.dimension() {
        return Err(Error::Dimension { expected: model.dimension(), got: start.len() });
    }
    if !bounds.contains(start) {
        return Err(Error::Infeasible { point: start.to_vec() });
    }
    if !(step > 0.0) || cfg.reps == 0 || cfg.center_reps < 2 || !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Domain("RSM needs step > 0, reps ≥ 1, centre reps ≥ 2 and 0 < α < 1".into()));
    }
    let d = model.dimension();
    let first = fractional_factorial(d).len() * cfg.reps + cfg.center_reps;
    if (first as u64) > budget.remaining() {
        return Err(Error::Budget { requested: first as u64, remaining: budget.remaining() });
    }
    let mut ev = Evaluator::new(model, budget, seed);
    let mut centre = Centre { x: start.to_vec(), outputs: Vec::new() };
    let mut moves = Vec::new();
    let mut pvalues = Vec::new();
    let mut truncated = false;
    for _ in 0..cfg.max_stage1_iterations {
        ev.next_iteration();
        if !centre.outputs.is_empty() {
            ev.set_incumbent(&centre.x, mean(&centre.outputs));
        }
        match ascent(&mut ev, &mut centre, step, cfg, &mut moves) {
            Ok((p, more)) => {
                pvalues.push(p);
                if !more {
                    break;
                }
            }
            Err(Error::Budget { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mut stage2 = None;
    let mut stage2_moves = Vec::new();
    let mut recommendation = centre.x.clone();
    let mut estimate = mean(&centre.outputs);
    let mut converged = false;
    let radius = cfg.stage2_radius.unwrap_or(2.0 * (d as f64).sqrt());
    let ccd = central_composite(d, (d as f64).sqrt());
    for _ in 0..cfg.max_stage2_iterations {
        if truncated {
            break;
        }
        ev.next_iteration();
        if !centre.outputs.is_empty() {
            ev.set_incumbent(&centre.x, mean(&centre.outputs));
        }
        match run_design(&mut ev, &ccd, &mut centre, step, cfg) {
            Ok(sets) => {
                let fit = LocalModel::fit(&sets, &centre.x, step, 2)?;
                let (x, kind, inside) = stationary(&fit, &bounds, radius);
                estimate = fit.predict(&x);
                let moved = x.iter().zip(&centre.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                stage2_moves.push(moved);
                recommendation = x.clone();
                stage2 = Some((fit, kind));
                if inside || moved == 0.0 {
                    converged = true;
                    break;
                }
                centre = Centre { x, outputs: Vec::new() };
            }
            Err(Error::Budget { .. }) => truncated = true,
            Err(e) => return Err(e),
        }
    }
    let trace = ev.finish("rsm", recommendation, estimate, truncated, converged);
    Ok(RsmReport { trace, stage1_moves: moves, lack_of_fit_pvalues: pvalues, stage2_moves, stage2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Bounds, Noise, Quadratic, SimRng};

    struct Flat(Bounds);

    impl SimulationModel for Flat {
        fn name(&self) -> &str {
            "flat"
        }
        fn dimension(&self) -> usize {
            2
        }
        fn bounds(&self) -> &Bounds {
            &self.0
        }
        fn evaluate(&self, _: &[f64], _: &mut SimRng) -> Result<f64> {
            Ok(4.0)
        }
    }

    #[test]
    fn noise_free_quadratic_hits_argmax() {
        let q = Quadratic::two_dim(Noise::None);
        for start in [[-2.5, 2.5], [2.0, 2.0], [0.0, 0.0]] {
            let r = rsm_run(&q, &start, 0.5, Budget::new(400).unwrap(), 3, &RsmConfig::default()).unwrap();
            let x = &r.trace.recommendation;
            let err = ((x[0] - 0.7).powi(2) + (x[1] + 0.4).powi(2)).sqrt();
            assert!(err < 1e-3, "{start:?} -> {x:?}");
            assert_eq!(r.stage2.as_ref().unwrap().1, StationaryKind::Maximum);
            assert_eq!(r.trace.consumed, r.trace.replications_recorded());
        }
    }

    #[test]
    fn constant_surface_does_not_move() {
        let f = Flat(Bounds::cube(2, -1.0, 1.0));
        let r = rsm_run(&f, &[0.3, -0.2], 0.2, Budget::new(200).unwrap(), 0, &RsmConfig::default()).unwrap();
        assert_eq!(r.stage1_moves, vec![0.0]);
        assert!(r.stage2.is_some());
    }

    #[test]
    fn noisy_run_is_reproducible() {
        let q = Quadratic::two_dim(Noise::Homoscedastic { sd: 0.2 });
        let a = rsm_run(&q, &[-2.0, 1.0], 0.4, Budget::new(300).unwrap(), 11, &RsmConfig::default()).unwrap();
        let b = rsm_run(&q, &[-2.0, 1.0], 0.4, Budget::new(300).unwrap(), 11, &RsmConfig::default()).unwrap();
        assert_eq!(a.trace.without_timing(), b.trace.without_timing());
        assert_eq!(a.stage1_moves, b.stage1_moves);
    }

    #[test]
    fn tiny_budget_truncates() {
        let q = Quadratic::two_dim(Noise::Homoscedastic { sd: 0.2 });
        let r = rsm_run(&q, &[-2.0, 1.0], 0.4, Budget::new(14).unwrap(), 1, &RsmConfig::default()).unwrap();
        assert!(r.trace.truncated);
        assert!(r.trace.consumed <= 14);
        assert!(rsm_run(&q, &[-2.0, 1.0], 0.4, Budget::new(5).unwrap(), 1, &RsmConfig::default()).is_err());
    }
}
