//! The sequential GP template shared by the global methods.
//!
//! 1. simulate an initial Latin-hypercube design;
//! 2. score candidates with the acquisition criterion and pick a batch;
//! 3. simulate the batch;
//! 4. refresh the posterior (hyperparameters are refitted on a schedule);
//! 5. repeat until the budget is spent;
//! 6. recommend the maximizer of the posterior mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acquisition::{KgContext, UcbSchedule};
use super::design::latin_hypercube_in;
use super::gps::{gps_build_model, gps_sample, gps_weights, smooth_sample, GpsSampler, WeightFamily};
use super::trace::{Budget, Evaluator, OptimizationTrace};
use crate::error::{Error, Result};
use crate::gp::{
    fit_hyperparameters_from, maximize_in_box, GpPosterior, GpPrior, Hyperparameters, KernelFamily, MeanSpec,
    Posterior, PriorFamily,
};
use crate::optimizers::latin_hypercube;
use crate::sim::{aggregate, AggregatedObservation, Dataset, ReplicationSet, SimulationModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Acquisition {
    KgDiscrete,
    KgSaa { samples: usize },
    Ucb { schedule: UcbSchedule },
    Gps {
        sampler: GpsSampler,
        weights: WeightFamily,
        /// Threshold `c`; the best data mean when unset.
        threshold: Option<f64>,
        /// Jitter sampled grid points by one grid spacing.
        smooth: bool,
    },
}

impl Acquisition {
    pub fn name(&self) -> &'static str {
        match self {
            Self::KgDiscrete => "kg",
            Self::KgSaa { .. } => "kg-saa",
            Self::Ucb { .. } => "ucb",
            Self::Gps { .. } => "gps",
        }
    }

    pub fn gps_default() -> Self {
        Self::Gps { sampler: GpsSampler::default(), weights: WeightFamily::default(), threshold: None, smooth: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Initial design size; `max(10·d, 4)` when unset.
    pub initial_points: Option<usize>,
    pub reps: usize,
    pub batch: usize,
    pub kernel: KernelFamily,
    /// Refit hyperparameters once the design has grown by this factor.
    pub refit_growth: f64,
    pub restarts: usize,
    /// Candidate grid size per dimension, refreshed every iteration.
    pub grid_per_dim: usize,
    pub final_grid_per_dim: usize,
    /// Lower bound on the pooled per-replication noise variance.
    pub noise_floor: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            initial_points: None,
            reps: 2,
            batch: 1,
            kernel: KernelFamily::Gaussian,
            refit_growth: 1.5,
            restarts: 2,
            grid_per_dim: 128,
            final_grid_per_dim: 512,
            noise_floor: 1e-10,
        }
    }
}

/// Replications per distinct design point, in first-visit order.
#[derive(Clone, Debug, Default)]
pub(crate) struct History {
    sets: Vec<ReplicationSet>,
}

impl History {
    pub(crate) fn add(&mut self, set: ReplicationSet) {
        match self.sets.iter_mut().find(|s| s.point == set.point) {
            Some(s) => s.merge(set),
            None => self.sets.push(set),
        }
    }

    /// Pooled per-replication variance from points with two or more
    /// replications, weighted by degrees of freedom.
    fn pooled_variance(&self) -> Option<f64> {
        let (mut ss, mut dof) = (0.0, 0usize);
        for s in &self.sets {
            if s.reps() >= 2 {
                ss += crate::stats::sample_variance(&s.outputs).expect("two reps") * (s.reps() - 1) as f64;
                dof += s.reps() - 1;
            }
        }
        (dof > 0).then(|| ss / dof as f64)
    }

    /// Means with `Σᵢ = σ̂²/rᵢ` from the pooled estimate.
    pub(crate) fn dataset(&self, dim: usize, floor: f64) -> Result<Dataset> {
        let s2 = self.pooled_variance().unwrap_or(0.0).max(floor);
        let obs = self
            .sets
            .iter()
            .map(|s| {
                let a = aggregate(s)?;
                Ok(AggregatedObservation { noise_var: Some(s2 / a.reps as f64), ..a })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_observations(dim, obs)
    }

    fn per_rep_variance(&self, floor: f64) -> f64 {
        self.pooled_variance().unwrap_or(0.0).max(floor)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Hyperparameters refitted by maximum likelihood each time the number of
/// distinct points grows by the given factor.
pub(crate) struct PriorFit {
    pub(crate) family: PriorFamily,
    pub(crate) theta: Option<Hyperparameters>,
    pub(crate) fitted_at: usize,
}

impl PriorFit {
    pub(crate) fn new(family: PriorFamily) -> Self {
        Self { family, theta: None, fitted_at: 0 }
    }

    pub(crate) fn refresh<R: Rng + ?Sized>(
        &mut self,
        data: &Dataset,
        widths: &[f64],
        growth: f64,
        restarts: usize,
        rng: &mut R,
    ) -> Result<GpPrior> {
        let due = self.theta.is_none() || data.len() as f64 >= growth * self.fitted_at as f64;
        if due {
            let bounds = self.family.default_bounds(data, widths);
            let mut starts: Vec<Vec<f64>> = latin_hypercube(restarts.max(1), bounds.lower.len(), rng)
                .into_iter()
                .map(|u| {
                    u.iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
                            if i + 1 == u.len() { lo + t * (hi - lo) } else { lo * (hi / lo).powf(*t) }
                        })
                        .collect()
                })
                .collect();
            if let Some(th) = &self.theta {
                starts.insert(0, th.values.clone());
            }
            let fit = fit_hyperparameters_from(&self.family, data, &bounds, &starts)?;
            self.theta = Some(fit.best);
            self.fitted_at = data.len();
        }
        self.family.build(self.theta.as_ref().expect("fitted"))
    }
}

/// Maximize the posterior mean over a Latin-hypercube grid plus the data
/// points, then polish the best grid point locally.
pub(crate) fn maximize_mean<P: Posterior, R: Rng + ?Sized>(
    post: &P,
    data_points: &[Vec<f64>],
    model: &dyn SimulationModel,
    per_dim: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let bounds = model.bounds();
    let mut cands = data_points.to_vec();
    cands.extend(latin_hypercube_in(per_dim * bounds.dim(), bounds, rng));
    let vals = cands.iter().map(|c| post.mean_at(c)).collect::<Result<Vec<_>>>()?;
    let i = argmax(&vals);
    let f = |x: &[f64]| post.mean_at(x).unwrap_or(f64::NEG_INFINITY);
    let (x, fx) = maximize_in_box(&f, &bounds.lower, &bounds.upper, &cands[i], 100);
    Ok(if fx >= vals[i] { (x, fx) } else { (cands[i].clone(), vals[i]) })
}

/// Top `k` distinct candidates by score, ties to the lowest index.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Run the template with the given acquisition criterion.
pub fn sequential_template(
    model: &dyn SimulationModel,
    acquisition: &Acquisition,
    cfg: &TemplateConfig,
    budget: Budget,
    seed: u64,
) -> Result<OptimizationTrace> {
    let d = model.dimension();
    let bounds = model.bounds().clone();
    let widths = bounds.widths();
    let reps = cfg.reps.max(1);
    let n0 = cfg.initial_points.unwrap_or((10 * d).max(4));
    let initial_cost = (n0 * reps) as u64;
    if initial_cost > budget.max_evaluations() {
        return Err(Error::Budget { requested: initial_cost, remaining: budget.max_evaluations() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut ev = Evaluator::new(model, budget, seed);
    let mut hist = History::default();

    // Step 1.
    for x in latin_hypercube_in(n0, &bounds, &mut rng) {
        hist.add(ev.simulate(&x, reps, None)?);
    }
    let mut fit = PriorFit::new(PriorFamily::new(cfg.kernel.clone(), MeanSpec::FittedConstant));

    // Steps 2–5.
    while ev.remaining() >= reps as u64 {
        ev.next_iteration();
        let data = hist.dataset(d, cfg.noise_floor)?;
        let prior = fit.refresh(&data, &widths, cfg.refit_growth, cfg.restarts, &mut rng)?;
        let points = data.points();
        let mut grid = latin_hypercube_in(cfg.grid_per_dim * d, &bounds, &mut rng);
        grid.extend(points.iter().cloned());
        let new_noise = hist.per_rep_variance(cfg.noise_floor) / reps as f64;
        let room = (ev.remaining() / reps as u64) as usize;
        let batch = cfg.batch.max(1).min(room);

        let (chosen, crit, incumbent, inc_est): (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64) = match acquisition {
            Acquisition::Gps { sampler, weights, threshold, smooth } => {
                let gps = gps_build_model(prior.cov.clone(), &data, *weights)?;
                let means = data.means();
                let best = argmax(&means);
                let c = threshold.unwrap_or(means[best]);
                let w = gps_weights(&gps, c, &grid);
                let idx = gps_sample(&w, *sampler, batch, &mut rng)?;
                let spacing = widths.iter().map(|w| w / (cfg.grid_per_dim as f64).powf(1.0 / d as f64)).fold(0.0, f64::max);
                let pts = idx
                    .iter()
                    .map(|&i| if *smooth { smooth_sample(&grid[i], spacing, &bounds, &mut rng) } else { grid[i].clone() })
                    .collect();
                (pts, idx.iter().map(|&i| w[i]).collect(), points[best].clone(), means[best])
            }
            _ => {
                let post = GpPosterior::new(prior.clone(), data.clone())?;
                let scores: Vec<f64> = match acquisition {
                    Acquisition::KgDiscrete => {
                        let ctx = KgContext::discrete(&post)?;
                        grid.iter().map(|x| ctx.score(x, new_noise)).collect::<Result<_>>()?
                    }
                    Acquisition::KgSaa { samples } => {
                        let ctx = KgContext::over(&post, grid.clone())?;
                        grid.iter().map(|x| ctx.score_saa(x, new_noise, *samples, &mut rng)).collect::<Result<_>>()?
                    }
                    Acquisition::Ucb { schedule } => {
                        let g = schedule.gamma(data.len());
                        grid.iter().map(|x| super::acquisition::ucb_score(&post, x, g)).collect::<Result<_>>()?
                    }
                    Acquisition::Gps { .. } => unreachable!(),
                };
                let idx = top_k(&scores, batch);
                let mu = points.iter().map(|p| post.mean_at(p)).collect::<Result<Vec<_>>>()?;
                let best = argmax(&mu);
                (idx.iter().map(|&i| grid[i].clone()).collect(), idx.iter().map(|&i| scores[i]).collect(), points[best].clone(), mu[best])
            }
        };
        ev.set_incumbent(&incumbent, inc_est);
        for (x, c) in chosen.iter().zip(crit) {
            hist.add(ev.simulate(x, reps, Some(c))?);
        }
    }

    // Step 6.
    let data = hist.dataset(d, cfg.noise_floor)?;
    let prior = fit.refresh(&data, &widths, cfg.refit_growth, cfg.restarts, &mut rng)?;
    let post = GpPosterior::new(prior, data.clone())?;
    let (x, fx) = maximize_mean(&post, &data.points(), model, cfg.final_grid_per_dim, &mut rng)?;
    Ok(ev.finish(acquisition.name(), x, fx, false, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Multimodal, Noise};

    #[test]
    fn budget_of_initial_design_only() {
        let m = Multimodal::one_dim(Noise::Homoscedastic { sd: 0.1 });
        let cfg = TemplateConfig { initial_points: Some(10), ..Default::default() };
        let t = sequential_template(&m, &Acquisition::KgDiscrete, &cfg, Budget::new(20).unwrap(), 3).unwrap();
        assert_eq!(t.consumed, 20);
        assert_eq!(t.replications_recorded(), 20);
        assert!(t.records.iter().all(|r| r.iter == 0));
        assert!(sequential_template(&m, &Acquisition::KgDiscrete, &cfg, Budget::new(19).unwrap(), 3).is_err());
    }

    #[test]
    fn runs_are_reproducible() {
        let m = Multimodal::one_dim(Noise::Homoscedastic { sd: 0.1 });
        let cfg = TemplateConfig { initial_points: Some(6), ..Default::default() };
        for acq in [Acquisition::Ucb { schedule: UcbSchedule::default() }, Acquisition::gps_default()] {
            let a = sequential_template(&m, &acq, &cfg, Budget::new(30).unwrap(), 9).unwrap();
            let b = sequential_template(&m, &acq, &cfg, Budget::new(30).unwrap(), 9).unwrap();
            assert_eq!(a.without_timing(), b.without_timing());
            assert_eq!(a.consumed, 30);
        }
    }

    #[test]
    fn duplicate_points_are_merged() {
        let mut h = History::default();
        let p = crate::sim::DesignPoint::new(vec![0.5]).unwrap();
        h.add(ReplicationSet::new(p.clone(), vec![1.0, 3.0], None).unwrap());
        h.add(ReplicationSet::new(p, vec![2.0, 2.0], None).unwrap());
        let d = h.dataset(1, 0.0).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.observations[0].reps, 4);
        assert_eq!(d.observations[0].mean, 2.0);
        // Pooled over one point: variance 2/3, divided by 4 replications.
        assert!((d.observations[0].noise_var.unwrap() - 2.0 / 3.0 / 4.0).abs() < 1e-15);
    }
}
