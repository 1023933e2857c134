//! A seeded instance on which the naive Nyström posterior goes negative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{nystrom_naive_posterior, select_active_set, ActiveSet};
use crate::error::{Error, Result};
use crate::gp::{CovarianceFunction, GpPrior};
use crate::sim::Dataset;

#[derive(Clone, Debug)]
pub struct NegativeVarianceFixture {
    pub seed: u64,
    pub prior: GpPrior,
    pub data: Dataset,
    pub active: ActiveSet,
    /// A query where the naive variance is negative.
    pub query: Vec<f64>,
    pub naive_variance: f64,
}

/// Small-noise 1-d data with three anchors out of twenty points. Seeds are
/// tried in order from `start` and the first one with a negative naive
/// variance on a 200-point grid is returned.
pub fn negative_variance_fixture(start: u64) -> Result<NegativeVarianceFixture> {
    let prior = GpPrior::zero_mean(CovarianceFunction::gaussian(1.0, 0.15)?);
    let grid: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 199.0]).collect();
    for seed in start..start + 1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let means: Vec<f64> = points.iter().map(|p| (5.0 * p[0]).sin()).collect();
        let data = Dataset::from_points(&points, &means, 1e-4)?;
        let active = select_active_set(20, 3, &mut rng)?;
        let post = nystrom_naive_posterior(prior.clone(), &data, &active)?;
        for q in &grid {
            let v = post.var_report(q)?;
            if v.negative {
                return Ok(NegativeVarianceFixture { seed, prior, data, active, query: q.clone(), naive_variance: v.value });
            }
        }
    }
    Err(Error::Domain("no negative-variance instance in the seed range".into()))
}
