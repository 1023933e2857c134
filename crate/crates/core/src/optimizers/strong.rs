//! STRONG: a trust-region method with statistically gated steps.

use serde::{Deserialize, Serialize};

use super::design::{central_composite, fractional_factorial, scale_design};
use super::local::{improvement_test, trust_region_step, LocalModel};
use super::trace::{Budget, Evaluator, OptimizationTrace};
use crate::error::{Error, Result};
use crate::sim::{ReplicationSet, SimulationModel};
use crate::stats::{mean, normal_quantile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrongConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub alpha: f64,
    /// Switch radius `Δ̃`; `0.2 · diagonal/√d` when unset.
    pub switch_radius: Option<f64>,
    /// Initial radius; `Δ̃` when unset.
    pub initial_radius: Option<f64>,
    /// Start point; the box centre when unset.
    pub start: Option<Vec<f64>>,
    /// Replications per design point at the initial radius.
    pub base_reps: usize,
    pub max_reps: usize,
    /// Target power of the improvement test when sizing the candidate
    /// and centre samples.
    pub power: f64,
    /// Cap on candidate and centre replications per iteration.
    pub max_test_reps: usize,
    /// Stop once `Δ` falls below this fraction of the box diagonal.
    pub min_radius_fraction: f64,
}

impl Default for StrongConfig {
    fn default() -> Self {
        Self {
            gamma1: 0.5,
            gamma2: 1.5,
            eta0: 0.25,
            eta1: 0.75,
            alpha: 0.05,
            switch_radius: None,
            initial_radius: None,
            start: None,
            base_reps: 2,
            max_reps: 64,
            power: 0.8,
            max_test_reps: 256,
            min_radius_fraction: 1e-9,
        }
    }
}

impl StrongConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.gamma1
            && self.gamma1 < 1.0
            && self.gamma2 > 1.0
            && 0.0 < self.eta0
            && self.eta0 < self.eta1
            && self.eta1 < 1.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.base_reps >= 1
            && self.max_reps >= self.base_reps
            && self.power > 0.0
            && self.power < 1.0
            && self.max_test_reps >= self.max_reps;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("STRONG constants must satisfy 0<γ₁<1<γ₂, 0<η₀<η₁<1, 0<α<1".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionState {
    pub center: Vec<f64>,
    pub radius: f64,
    pub switch_radius: f64,
    pub iteration: usize,
    /// Every replication taken at the centre.
    pub center_outputs: Vec<f64>,
}

/// Accept/resize decision of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    MoveExpand,
    MoveKeep,
    StayShrink,
}

/// The three-way update: a failed reduction test or a missing ratio
/// shrinks; otherwise `ρ ≥ η₁` expands, `η₀ ≤ ρ < η₁` keeps and `ρ < η₀`
/// shrinks.
pub fn strong_transition(rho: Option<f64>, test_passed: bool, cfg: &StrongConfig) -> Transition {
    match rho {
        Some(r) if test_passed && r >= cfg.eta1 => Transition::MoveExpand,
        Some(r) if test_passed && r >= cfg.eta0 => Transition::MoveKeep,
        _ => Transition::StayShrink,
    }
}

/// What one STRONG iteration did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub order: u8,
    pub candidate: Vec<f64>,
    pub predicted: f64,
    pub observed: f64,
    pub rho: Option<f64>,
    pub test_passed: bool,
    pub transition: Transition,
}

/// Replications needed for a two-sample z test at level `alpha` to detect
/// `effect` with the given power, for per-replication variance `var`.
fn test_reps(cfg: &StrongConfig, var: f64, effect: f64, floor: usize) -> usize {
    if var <= 0.0 {
        return floor;
    }
    let z = normal_quantile(1.0 - cfg.alpha) + normal_quantile(cfg.power);
    let r = (2.0 * z * z * var / (effect * effect)).ceil();
    if r.is_finite() {
        (r as usize).clamp(floor, cfg.max_test_reps)
    } else {
        cfg.max_test_reps
    }
}

fn reps_for(cfg: &StrongConfig, initial: f64, radius: f64) -> usize {
    let r = (cfg.base_reps as f64 * (initial / radius)).ceil();
    (r as usize).clamp(cfg.base_reps, cfg.max_reps)
}

/// One iteration: local design, model, subproblem, test and update.
pub fn strong_step(
    ev: &mut Evaluator<'_>,
    state: &mut TrustRegionState,
    cfg: &StrongConfig,
    initial_radius: f64,
) -> Result<StepRecord> {
    let model = ev.model();
    let bounds = model.bounds().clone();
    let d = model.dimension();
    let order: u8 = if state.radius >= state.switch_radius { 1 } else { 2 };
    let reps = reps_for(cfg, initial_radius, state.radius);
    let (runs, scale) = if order == 1 {
        (fractional_factorial(d), state.radius / (d as f64).sqrt())
    } else {
        (central_composite(d, (d as f64).sqrt()), state.radius / (d as f64).sqrt())
    };
    let points = scale_design(&runs, &state.center, scale, &bounds);
    let cost = (points.len() + 2) * reps;
    if (cost as u64) > ev.remaining() {
        return Err(Error::Budget { requested: cost as u64, remaining: ev.remaining() });
    }
    ev.next_iteration();
    let inc_est = mean(&state.center_outputs);
    ev.set_incumbent(&state.center, inc_est);
    let mut sets: Vec<ReplicationSet> = Vec::with_capacity(points.len() + 1);
    for p in &points {
        let s = ev.simulate(p, reps, None)?;
        match sets.iter_mut().find(|q| q.point == s.point) {
            Some(q) => q.merge(s),
            None => sets.push(s),
        }
    }
    let center_new = ev.simulate(&state.center, reps, None)?;
    state.center_outputs.extend_from_slice(&center_new.outputs);
    let center_set = ReplicationSet::new(center_new.point.clone(), state.center_outputs.clone(), None)?;
    match sets.iter_mut().find(|q| q.point == center_set.point) {
        Some(q) => q.outputs.extend(center_set.outputs),
        None => sets.push(center_set),
    }
    let fitted = LocalModel::fit(&sets, &state.center, scale, order)?;
    let s = trust_region_step(&fitted.g, &fitted.h, state.radius / scale);
    let cand = bounds.project(&state.center.iter().zip(s.iter()).map(|(c, u)| c + scale * u).collect::<Vec<_>>());
    let predicted = fitted.predict(&cand) - fitted.predict(&state.center);
    if !(predicted > 0.0) || cand == state.center {
        state.radius *= cfg.gamma1;
        return Ok(StepRecord {
            order,
            candidate: cand,
            predicted,
            observed: 0.0,
            rho: None,
            test_passed: false,
            transition: Transition::StayShrink,
        });
    }
    let mut test_r = test_reps(cfg, fitted.pure_error_variance(), predicted, reps);
    // Near the end of the budget, test with what is left.
    let held = state.center_outputs.len();
    let left = ev.remaining() as usize;
    let affordable = if left <= held { left } else { (left + held) / 2 };
    if test_r > affordable {
        if affordable < reps {
            return Err(Error::Budget { requested: (2 * test_r).saturating_sub(held) as u64, remaining: left as u64 });
        }
        test_r = affordable;
    }
    let top_up = test_r.saturating_sub(held);
    if top_up > 0 {
        let extra = ev.simulate(&state.center, top_up, None)?;
        state.center_outputs.extend_from_slice(&extra.outputs);
    }
    let center_mean = mean(&state.center_outputs);
    let cand_set = ev.simulate(&cand, test_r, Some(predicted))?;
    let observed = mean(&cand_set.outputs) - center_mean;
    let test_passed = improvement_test(&state.center_outputs, &cand_set.outputs, cfg.alpha);
    let rho = Some(observed / predicted);
    let transition = strong_transition(rho, test_passed, cfg);
    match transition {
        Transition::MoveExpand | Transition::MoveKeep => {
            state.center = cand.clone();
            state.center_outputs = cand_set.outputs.clone();
            if transition == Transition::MoveExpand {
                state.radius *= cfg.gamma2;
            }
        }
        Transition::StayShrink => state.radius *= cfg.gamma1,
    }
    state.iteration += 1;
    Ok(StepRecord { order, candidate: cand, predicted, observed, rho, test_passed, transition })
}

/// Run STRONG until the budget cannot pay for another iteration.
pub fn strong_run(model: &dyn SimulationModel, cfg: &StrongConfig, budget: Budget, seed: u64) -> Result<(OptimizationTrace, Vec<StepRecord>)> {
    cfg.validate()?;
    let bounds = model.bounds();
    let d = model.dimension();
    let switch_radius = cfg.switch_radius.unwrap_or(0.2 * bounds.diagonal() / (d as f64).sqrt());
    let initial = cfg.initial_radius.unwrap_or(switch_radius);
    let start = cfg.start.clone().unwrap_or_else(|| bounds.center());
    if !bounds.contains(&start) {
        return Err(Error::Infeasible { point: start });
    }
    let mut ev = Evaluator::new(model, budget, seed);
    let first = ev.simulate(&start, cfg.base_reps, None)?;
    let mut state = TrustRegionState {
        center: start,
        radius: initial,
        switch_radius,
        iteration: 0,
        center_outputs: first.outputs,
    };
    let floor = cfg.min_radius_fraction * bounds.diagonal();
    let mut steps = Vec::new();
    let (mut converged, mut truncated) = (false, false);
    loop {
        if state.radius < floor {
            converged = true;
            break;
        }
        match strong_step(&mut ev, &mut state, cfg, initial) {
            Ok(rec) => steps.push(rec),
            Err(Error::Budget { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let est = mean(&state.center_outputs);
    Ok((ev.finish("strong", state.center.clone(), est, truncated, converged), steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Noise, Quadratic};
    use proptest::prelude::*;

    #[test]
    fn ratio_one_expands() {
        let cfg = StrongConfig::default();
        assert_eq!(strong_transition(Some(1.0), true, &cfg), Transition::MoveExpand);
        assert_eq!(strong_transition(Some(1.0), false, &cfg), Transition::StayShrink);
        assert_eq!(strong_transition(None, true, &cfg), Transition::StayShrink);
    }

    proptest! {
        #[test]
        fn transition_table(rho in -2.0..2.0f64, passed: bool) {
            let cfg = StrongConfig::default();
            let t = strong_transition(Some(rho), passed, &cfg);
            let want = if !passed || rho < cfg.eta0 {
                Transition::StayShrink
            } else if rho < cfg.eta1 {
                Transition::MoveKeep
            } else {
                Transition::MoveExpand
            };
            prop_assert_eq!(t, want);
        }
    }

    #[test]
    fn noise_free_quadratic_reaches_stationarity() {
        let q = Quadratic::two_dim(Noise::None);
        let (t, _) = strong_run(&q, &StrongConfig::default(), Budget::new(200).unwrap(), 1).unwrap();
        assert!(t.consumed <= 200);
        assert_eq!(t.consumed, t.replications_recorded());
        let g: f64 = q.true_gradient(&t.recommendation).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(g < 1e-2, "gradient norm {g} at {:?}", t.recommendation);
    }

    #[test]
    fn clearly_worse_candidate_is_rejected() {
        // A model that is linear in a 1-d box, but the simulator lies:
        // everything away from the start is much worse.
        struct Trap(crate::sim::Bounds);
        impl SimulationModel for Trap {
            fn name(&self) -> &str { "trap" }
            fn dimension(&self) -> usize { 1 }
            fn bounds(&self) -> &crate::sim::Bounds { &self.0 }
            fn evaluate(&self, x: &[f64], _: &mut crate::sim::SimRng) -> Result<f64> {
                Ok(if x[0] == 0.0 { 0.0 } else if x[0].abs() < 0.3 { x[0] } else { -100.0 })
            }
        }
        let model = Trap(crate::sim::Bounds::cube(1, -1.0, 1.0));
        let cfg = StrongConfig { switch_radius: Some(0.1), initial_radius: Some(0.2), start: Some(vec![0.0]), ..Default::default() };
        let mut ev = Evaluator::new(&model, Budget::new(100).unwrap(), 0);
        let first = ev.simulate(&[0.0], 2, None).unwrap();
        let mut state = TrustRegionState { center: vec![0.0], radius: 0.4, switch_radius: 0.1, iteration: 0, center_outputs: first.outputs };
        let rec = strong_step(&mut ev, &mut state, &cfg, 0.4).unwrap();
        assert_eq!(rec.transition, Transition::StayShrink);
        assert!(!rec.test_passed);
        assert_eq!(state.center, vec![0.0]);
        assert!((state.radius - 0.2).abs() < 1e-15);
    }
}
