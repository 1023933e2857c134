//! One-step posterior update for a single new observation.

use super::Posterior;
use crate::error::{Error, Result};

/// Posterior after observing `y` at `v` with noise variance `σ²(v)`:
/// `μ_{n+1}(x) = μₙ(x) + δₙ(x, v)Z` and
/// `K_{n+1}(x, x') = Kₙ(x, x') − δₙ(x, v)δₙ(x', v)`, with
/// `δₙ(x, v) = Kₙ(x, v)/s`, `Z = (y − μₙ(v))/s`, `s² = Kₙ(v, v) + σ²(v)`.
#[derive(Clone, Debug)]
pub struct UpdatedPosterior<P> {
    base: P,
    point: Vec<f64>,
    scale: f64,
    z: f64,
}

impl<P: Posterior> UpdatedPosterior<P> {
    /// `δₙ(x, v)`.
    pub fn delta(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base.cov_at(x, &self.point)? / self.scale)
    }

    /// The standardized innovation `Z`.
    pub fn innovation(&self) -> f64 {
        self.z
    }

    pub fn base(&self) -> &P {
        &self.base
    }
}

impl<P: Posterior> Posterior for UpdatedPosterior<P> {
    fn mean_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base.mean_at(x)? + self.delta(x)? * self.z)
    }

    fn cov_at(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.base.cov_at(x, y)? - self.delta(x)? * self.delta(y)?)
    }

    fn prior_var(&self, x: &[f64]) -> f64 {
        self.base.prior_var(x)
    }
}

/// Condition `post` on one more observation `y_next` at `x_next`.
pub fn kg_update<P: Posterior>(post: P, x_next: &[f64], y_next: f64, noise_var: f64) -> Result<UpdatedPosterior<P>> {
    if !(noise_var >= 0.0) {
        return Err(Error::Domain(format!("noise variance must be nonnegative, got {noise_var}")));
    }
    let s2 = post.cov_at(x_next, x_next)?.max(0.0) + noise_var;
    if !(s2 > 0.0) {
        return Err(Error::Singular("Kₙ(v, v) + σ²(v) = 0 in the updating scheme".into()));
    }
    let scale = s2.sqrt();
    let z = (y_next - post.mean_at(x_next)?) / scale;
    Ok(UpdatedPosterior { base: post, point: x_next.to_vec(), scale, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{CovarianceFunction, GpPosterior, GpPrior, MeanFunction};
    use crate::sim::{AggregatedObservation, Dataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (GpPrior, Dataset, Vec<f64>, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = GpPrior::new(MeanFunction::Constant(0.3), CovarianceFunction::gaussian(1.1, 0.35).unwrap());
        let obs = (0..5)
            .map(|_| {
                let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
                AggregatedObservation::new(x, rng.random_range(-1.0..1.0), 1, rng.random_range(0.01..0.1))
            })
            .collect();
        let ds = Dataset::from_observations(2, obs).unwrap();
        let v = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        (prior, ds, v, rng.random_range(-1.0..1.0), 0.05)
    }

    #[test]
    fn matches_refit() {
        for seed in 0..5 {
            let (prior, ds, v, y, s2) = instance(seed);
            let post = GpPosterior::new(prior.clone(), ds.clone()).unwrap();
            let upd = kg_update(&post, &v, y, s2).unwrap();
            let mut ds2 = ds.clone();
            ds2.push(AggregatedObservation::new(v.clone(), y, 1, s2)).unwrap();
            let refit = GpPosterior::new(prior, ds2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let qs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2)]).collect();
            for a in &qs {
                assert!((upd.mean_at(a).unwrap() - refit.mean_at(a).unwrap()).abs() < 1e-7);
                for b in &qs[..3] {
                    assert!((upd.cov_at(a, b).unwrap() - refit.cov_at(a, b).unwrap()).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let (prior, ds, v, _, s2) = instance(9);
        let post = GpPosterior::new(prior, ds).unwrap();
        let y = post.mean_at(&v).unwrap();
        let upd = kg_update(&post, &v, y, s2).unwrap();
        assert_eq!(upd.innovation(), 0.0);
        for x in [[0.1, 0.9], [0.5, 0.5]] {
            assert_eq!(upd.mean_at(&x).unwrap(), post.mean_at(&x).unwrap());
        }
    }

    #[test]
    fn uncorrelated_point_changes_nothing() {
        let (prior, ds, _, _, s2) = instance(4);
        let post = GpPosterior::new(prior, ds).unwrap();
        let far = [100.0, 100.0];
        let upd = kg_update(&post, &far, 5.0, s2).unwrap();
        let x = [0.4, 0.6];
        assert_eq!(upd.delta(&x).unwrap(), 0.0);
        assert_eq!(upd.cov_at(&x, &x).unwrap(), post.cov_at(&x, &x).unwrap());
    }

    #[test]
    fn zero_denominator_is_an_error() {
        let prior = GpPrior::zero_mean(CovarianceFunction::gaussian(1.0, 1.0).unwrap());
        let ds = Dataset::from_points(&[vec![0.0]], &[1.0], 0.0).unwrap();
        let post = GpPosterior::new(prior, ds).unwrap();
        assert!(kg_update(&post, &[0.0], 1.0, 0.0).is_err());
    }
}
