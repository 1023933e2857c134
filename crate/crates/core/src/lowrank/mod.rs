//! Low-rank approximations of the GP posterior for large designs.
//!
//! The Nyström method anchors the approximation on an active subset of the
//! design points; random Fourier features approximate a stationary kernel
//! by a random cosine feature map. Every construction touches only `n × m`
//! and `m × m` matrices.

mod approx;
mod fixture;
mod nystrom;
mod rff;
mod scaling;
mod woodbury;

use std::sync::Arc;

use rand::Rng;

pub use approx::{
    nystrom_kernel_posterior, nystrom_naive_posterior, rff_posterior, ApproxPosterior, ApproxVariant, VarianceReport,
};
pub use fixture::{negative_variance_fixture, NegativeVarianceFixture};
pub use nystrom::{select_active_set, ActiveSet, NystromInduced};
pub use rff::{rff_kernel_estimate, spectral_sample, spectral_sample_with, RffBasis, RffDescriptor};
pub use scaling::{scaling_report, synthetic_dataset, ScalingReport, ScalingRow, ScalingVariant};
pub use woodbury::woodbury_solve;

use crate::error::{Error, Result};
use crate::gp::{GpPrior, Posterior};
use crate::sim::Dataset;

/// Build an approximate posterior of the given variant with `m` anchors or
/// features.
pub fn build_approx<R: Rng + ?Sized>(
    variant: ApproxVariant,
    prior: GpPrior,
    data: &Dataset,
    m: usize,
    rng: &mut R,
) -> Result<ApproxPosterior> {
    match variant {
        ApproxVariant::NystromNaive => {
            let a = select_active_set(data.len(), m, rng)?;
            nystrom_naive_posterior(prior, data, &a)
        }
        ApproxVariant::NystromKernel => {
            let a = select_active_set(data.len(), m, rng)?;
            nystrom_kernel_posterior(prior, data, &a)
        }
        ApproxVariant::Rff => {
            let basis = spectral_sample_with(&prior.cov, data.dimension, m, rng)?;
            rff_posterior(prior, data, Arc::new(basis))
        }
    }
}

/// Outcome of the increasing-`m` search.
#[derive(Clone, Debug, PartialEq)]
pub struct MSelection {
    pub m: usize,
    /// Held-out root-mean-square error of the posterior mean per tried `m`.
    pub errors: Vec<(usize, f64)>,
}

/// Try `m` values in increasing order and stop once the held-out error
/// improves by less than `threshold` (relative) over the previous value.
pub fn select_m<R: Rng + ?Sized>(
    variant: ApproxVariant,
    prior: &GpPrior,
    data: &Dataset,
    heldout: &Dataset,
    grid: &[usize],
    threshold: f64,
    rng: &mut R,
) -> Result<MSelection> {
    if grid.is_empty() || heldout.is_empty() {
        return Err(Error::Domain("need a nonempty m grid and held-out set".into()));
    }
    let mut errors: Vec<(usize, f64)> = Vec::new();
    for &m in grid {
        let post = build_approx(variant, prior.clone(), data, m, rng)?;
        let mut sq = 0.0;
        for o in &heldout.observations {
            sq += (post.mean_at(&o.point)? - o.mean).powi(2);
        }
        let rmse = (sq / heldout.len() as f64).sqrt();
        if let Some(&(prev_m, prev)) = errors.last() {
            if prev - rmse < threshold * prev {
                errors.push((m, rmse));
                return Ok(MSelection { m: if rmse < prev { m } else { prev_m }, errors });
            }
        }
        errors.push((m, rmse));
    }
    Ok(MSelection { m: *grid.last().expect("nonempty"), errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::CovarianceFunction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn m_search_stops_when_flat() {
        let data = synthetic_dataset(300, 1);
        let held = synthetic_dataset(100, 2);
        let prior = GpPrior::zero_mean(CovarianceFunction::gaussian(1.0, 0.2).unwrap());
        let sel = select_m(
            ApproxVariant::NystromKernel,
            &prior,
            &data,
            &held,
            &[5, 10, 20, 40, 80, 160, 300],
            0.01,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert!(sel.errors.len() >= 2);
        assert!(sel.errors.iter().any(|(m, _)| *m == sel.m));
    }
}
