//! Construction-time scaling of exact and low-rank posteriors.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{nystrom_kernel_posterior, nystrom_naive_posterior, rff_posterior, select_active_set, spectral_sample};
use crate::error::Result;
use crate::gp::{CovarianceFunction, GpPosterior, GpPrior, Posterior};
use crate::sim::{AggregatedObservation, Dataset};

/// Which posterior a scaling row times.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingVariant {
    Exact,
    NystromNaive,
    NystromKernel,
    Rff,
}

impl ScalingVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::NystromNaive => "nystrom_naive",
            Self::NystromKernel => "nystrom_kernel",
            Self::Rff => "rff",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub variant: ScalingVariant,
    pub n: usize,
    pub m: usize,
    pub build_ms: f64,
    pub query_ms: f64,
}

#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

const QUERIES: usize = 100;

/// Synthetic 2-d regression data of size `n`.
pub fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = (0..n)
        .map(|_| {
            let x: Vec<f64> = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let y = (6.0 * x[0]).sin() * (4.0 * x[1]).cos() + 0.1 * crate::stats::std_normal(&mut rng);
            AggregatedObservation::new(x, y, 1, 0.01)
        })
        .collect();
    Dataset::from_observations(2, obs).expect("consistent synthetic data")
}

fn time_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64() * 1e3))
}

fn query_ms(post: &dyn Posterior, queries: &[Vec<f64>]) -> Result<f64> {
    let start = Instant::now();
    for q in queries {
        std::hint::black_box(post.mean_at(q)?);
        std::hint::black_box(post.cov_at(q, q)?);
    }
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Time posterior construction for each `n`, keeping the fastest of
/// `repeats` builds. The exact variant ignores `m`.
pub fn scaling_report(variant: ScalingVariant, ns: &[usize], m: usize, repeats: usize, seed: u64) -> Result<ScalingReport> {
    let prior = GpPrior::zero_mean(CovarianceFunction::gaussian(1.0, 0.2)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries: Vec<Vec<f64>> = (0..QUERIES).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let data = synthetic_dataset(n, seed ^ n as u64);
        let mut best_build = f64::INFINITY;
        let mut best_query = f64::INFINITY;
        for rep in 0..repeats.max(1) {
            let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep as u64));
            let (post, build): (Box<dyn Posterior>, f64) = match variant {
                ScalingVariant::Exact => {
                    let (p, t) = time_ms(|| GpPosterior::new(prior.clone(), data.clone()))?;
                    (Box::new(p), t)
                }
                ScalingVariant::NystromNaive => {
                    let a = select_active_set(n, m.min(n), &mut r)?;
                    let (p, t) = time_ms(|| nystrom_naive_posterior(prior.clone(), &data, &a))?;
                    (Box::new(p), t)
                }
                ScalingVariant::NystromKernel => {
                    let a = select_active_set(n, m.min(n), &mut r)?;
                    let (p, t) = time_ms(|| nystrom_kernel_posterior(prior.clone(), &data, &a))?;
                    (Box::new(p), t)
                }
                ScalingVariant::Rff => {
                    let (p, t) = time_ms(|| {
                        let basis = Arc::new(spectral_sample(&prior.cov, 2, m, r.random())?);
                        rff_posterior(prior.clone(), &data, basis)
                    })?;
                    (Box::new(p), t)
                }
            };
            best_build = best_build.min(build);
            best_query = best_query.min(query_ms(post.as_ref(), &queries)?);
        }
        let m_col = if variant == ScalingVariant::Exact { n } else { m.min(n) };
        rows.push(ScalingRow { variant, n, m: m_col, build_ms: best_build, query_ms: best_query });
    }
    Ok(ScalingReport { rows })
}

impl ScalingReport {
    /// Least-squares slope of `ln build_ms` against `ln n`.
    pub fn slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| ((r.n as f64).ln(), r.build_ms.max(1e-9).ln())).collect();
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    /// Header `variant,n,m,build_ms,query_ms`, one row per size.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,n,m,build_ms,query_ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:.16e},{:.16e}\n", r.variant.name(), r.n, r.m, r.build_ms, r.query_ms));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_fields_are_deterministic() {
        let a = scaling_report(ScalingVariant::NystromKernel, &[50, 100], 10, 1, 3).unwrap();
        let b = scaling_report(ScalingVariant::NystromKernel, &[50, 100], 10, 1, 3).unwrap();
        let key = |r: &ScalingReport| r.rows.iter().map(|x| (x.variant, x.n, x.m)).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
        assert!(a.to_csv().starts_with("variant,n,m,build_ms,query_ms\nnystrom_kernel,50,10,"));
    }
}
