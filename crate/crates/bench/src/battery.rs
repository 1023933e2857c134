//! Fast numerical identity checks behind the `selfcheck` command.
//!
//! Every check compares an implementation against an independent dense
//! oracle on seeded random instances. A nonzero `perturb` adds a relative
//! bump to the implementation side, which must make the check fail.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surropt::gp::{kg_update, posterior, CovarianceFunction, GpPrior, MeanFunction, Posterior};
use surropt::lowrank::{nystrom_kernel_posterior, nystrom_naive_posterior, select_active_set, spectral_sample, woodbury_solve, ActiveSet};
use surropt::sim::{AggregatedObservation, Dataset};
use surropt::surrogates::{fit_rls, FeatureMap, KrrPredictor, RadialKind, Rbf};

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Identity {
    RlsKrr,
    KgUpdate,
    Woodbury,
    NystromOracle,
    NystromFullRank,
    CosineProduct,
}

impl Identity {
    pub const ALL: [Identity; 6] = [
        Identity::RlsKrr,
        Identity::KgUpdate,
        Identity::Woodbury,
        Identity::NystromOracle,
        Identity::NystromFullRank,
        Identity::CosineProduct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RlsKrr => "rls-krr",
            Self::KgUpdate => "kg-update",
            Self::Woodbury => "woodbury",
            Self::NystromOracle => "nystrom-oracle",
            Self::NystromFullRank => "nystrom-full-rank",
            Self::CosineProduct => "cosine-product",
        }
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Identity {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|i| i.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|i| i.name()).collect();
            BenchError::config("perturb", format!("unknown identity `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub identity: Identity,
    pub passed: bool,
    /// Largest discrepancy seen, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
    pub detail: String,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {}: worst {:.3e} (tolerance {:.1e}) in {:.2} s; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.identity,
            self.worst,
            self.tolerance,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn report(identity: Identity, worst: f64, tolerance: f64, start: Instant, detail: String) -> CheckReport {
    CheckReport { identity, passed: worst <= tolerance, worst, tolerance, elapsed: start.elapsed(), detail }
}

fn bump(v: f64, perturb: f64) -> f64 {
    v * (1.0 + perturb) + perturb
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

/// Heteroscedastic data from a smooth surface with noise variances in
/// `[0.01, 0.1)`.
fn noisy_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let obs = uniform_points(rng, n, d)
        .into_iter()
        .map(|x| {
            let y = x.iter().map(|v| (4.0 * v).sin()).sum::<f64>() + 0.3;
            AggregatedObservation::new(x, y, 1, rng.random_range(0.01..0.1))
        })
        .collect();
    Dataset::from_observations(d, obs).expect("consistent dimensions")
}

fn random_prior(rng: &mut ChaCha8Rng, eta: std::ops::Range<f64>) -> Result<GpPrior> {
    let cov = CovarianceFunction::gaussian(rng.random_range(0.5..2.0), rng.random_range(eta))?;
    Ok(GpPrior::new(MeanFunction::Constant(rng.random_range(-0.5..0.5)), cov))
}

/// Ridge regression on a feature map against kernel ridge with the
/// inner-product kernel of the same map. The error is normwise over the
/// query set: `‖f_krr − f_rls‖₂ / ‖f_rls‖₂`.
pub fn check_rls_krr(instances: usize, queries: usize, seed: u64, perturb: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(5..=30);
        let p = rng.random_range(2..=10);
        let lambda = [1e-3, 0.1, 1.0][k % 3];
        let centers = uniform_points(&mut rng, p, d);
        let features: Arc<dyn FeatureMap> = Arc::new(Rbf::new(centers, RadialKind::Gaussian { eta: rng.random_range(0.2..0.8) })?);
        let points = uniform_points(&mut rng, n, d);
        let means: Vec<f64> = points.iter().map(|x| x.iter().map(|v| (3.0 * v).cos()).sum::<f64>() + rng.random_range(-0.1..0.1)).collect();
        let data = Dataset::from_points(&points, &means, 0.0)?;
        let rls = fit_rls(features.clone(), &data, lambda)?;
        let krr = KrrPredictor::new(CovarianceFunction::InnerProduct(features), &data, lambda)?;
        let (mut num, mut den) = (0.0, 0.0);
        for q in uniform_points(&mut rng, queries, d) {
            let a = rls.predict(&q);
            num += (bump(krr.predict(&q), perturb) - a).powi(2);
            den += a * a;
        }
        worst = worst.max((num / den.max(f64::MIN_POSITIVE)).sqrt());
    }
    Ok(report(Identity::RlsKrr, worst, 1e-7, start, format!("{instances} instances x {queries} queries")))
}

/// One-step posterior update against a refit on the augmented data.
pub fn check_kg_update(instances: usize, queries: usize, seed: u64, perturb: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(3..=30);
        let prior = random_prior(&mut rng, 0.2..0.6)?;
        let data = noisy_instance(&mut rng, n, d);
        let x_next: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let y_next = rng.random_range(-1.0..1.0);
        let noise = rng.random_range(0.01..0.1);
        let base = posterior(prior.clone(), data.clone())?;
        let updated = kg_update(&base, &x_next, y_next, noise)?;
        let mut grown = data.clone();
        grown.push(AggregatedObservation::new(x_next, y_next, 1, noise))?;
        let refit = posterior(prior, grown)?;
        let qs = uniform_points(&mut rng, queries, d);
        for (i, q) in qs.iter().enumerate() {
            let other = &qs[(i + 1) % qs.len()];
            worst = worst.max(rel(bump(updated.mean_at(q)?, perturb), refit.mean_at(q)?));
            worst = worst.max(rel(bump(updated.cov_at(q, other)?, perturb), refit.cov_at(q, other)?));
        }
    }
    Ok(report(Identity::KgUpdate, worst, 1e-7, start, format!("{instances} instances x {queries} queries, mean and covariance")))
}

/// `woodbury_solve` against a dense LU solve of `(UCUᵀ + Σ)x = b`,
/// normwise relative.
pub fn check_woodbury(instances: usize, seed: u64, perturb: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..=40);
        let m = rng.random_range(1..=10usize.min(n));
        let sigma = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
        let u = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let c = &a * a.transpose() + DMatrix::identity(m, m) * 0.5;
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x = woodbury_solve(&sigma, &u, &c, &u.transpose(), &b)?.map(|v| bump(v, perturb));
        let dense = &u * &c * u.transpose() + DMatrix::from_diagonal(&sigma);
        let oracle = dense.lu().solve(&b).ok_or_else(|| BenchError::config("woodbury", "dense oracle singular"))?;
        worst = worst.max((&x - &oracle).norm() / oracle.norm());
    }
    Ok(report(Identity::Woodbury, worst, 1e-8, start, format!("{instances} instances")))
}

/// Result of [`check_nystrom_oracle`]: the posterior check and the
/// intermediate chain identity, each with its own tolerance.
#[derive(Clone, Debug)]
pub struct NystromOracleReport {
    pub posterior: CheckReport,
    pub chain_worst: f64,
    pub chain_tolerance: f64,
}

impl NystromOracleReport {
    pub fn passed(&self) -> bool {
        self.posterior.passed && self.chain_worst <= self.chain_tolerance
    }
}

/// Induced-kernel Nyström posterior against a dense posterior built from
/// `K̃(x, x') = k_m(x)ᵀK_mm⁻¹k_m(x')`, plus the identity
/// `k̃(x)ᵀ(K̃ + Σ)⁻¹ = k_m(x)ᵀQ⁻¹K_mnΣ⁻¹` with `Q = K_mm + K_mnΣ⁻¹K_nm`.
pub fn check_nystrom_oracle(instances: usize, queries: usize, seed: u64, perturb: f64) -> Result<NystromOracleReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let singular = || BenchError::config("nystrom", "dense oracle matrix is singular");
    let (mut worst, mut chain): (f64, f64) = (0.0, 0.0);
    for _ in 0..instances {
        let d = rng.random_range(2..=3);
        let n = rng.random_range(12..=50);
        let m = rng.random_range(2..=10);
        let prior = random_prior(&mut rng, 0.15..0.35)?;
        let data = noisy_instance(&mut rng, n, d);
        let active = select_active_set(n, m, &mut rng)?;
        let post = nystrom_kernel_posterior(prior.clone(), &data, &active)?;

        let points = data.points();
        let anchors: Vec<Vec<f64>> = active.indices().iter().map(|&i| points[i].clone()).collect();
        let kmm = prior.cov.gram(&anchors);
        let kmm_inv = kmm.clone().try_inverse().ok_or_else(singular)?;
        let knm = prior.cov.cross_matrix(&points, &anchors);
        let sigma = DVector::from_vec(data.noise_diag()?);
        let sigma_inv = DMatrix::from_diagonal(&sigma.map(|s| 1.0 / s));
        let kt = &knm * &kmm_inv * knm.transpose();
        let inv = (&kt + DMatrix::from_diagonal(&sigma)).try_inverse().ok_or_else(singular)?;
        let q_inv = (&kmm + knm.transpose() * &sigma_inv * &knm).try_inverse().ok_or_else(singular)?;
        let resid = DVector::from_iterator(n, data.observations.iter().map(|o| o.mean - prior.mean.eval(&o.point)));
        let ktilde = |x: &[f64]| &knm * &kmm_inv * prior.cov.cross(&anchors, x);

        let qs = uniform_points(&mut rng, queries, d);
        for (i, q) in qs.iter().enumerate() {
            let other = &qs[(i + 1) % qs.len()];
            let kq = ktilde(q);
            let mean = prior.mean.eval(q) + kq.dot(&(&inv * &resid));
            let cov = prior.cov.eval(q, other) - (kq.transpose() * &inv * ktilde(other))[0];
            worst = worst.max(rel(bump(post.mean_at(q)?, perturb), mean));
            worst = worst.max(rel(bump(post.cov_at(q, other)?, perturb), cov));

            let km = prior.cov.cross(&anchors, q);
            let left = kq.transpose() * &inv;
            let right = km.transpose() * &q_inv * knm.transpose() * &sigma_inv;
            chain = chain.max((left - right).amax());
        }
    }
    let posterior = report(Identity::NystromOracle, worst, 1e-7, start, format!("{instances} instances x {queries} queries; chain identity worst {chain:.3e} (tolerance 1.0e-8)"));
    Ok(NystromOracleReport { posterior, chain_worst: chain, chain_tolerance: 1e-8 })
}

/// Both Nyström variants with every point active against the exact
/// posterior.
pub fn check_nystrom_full_rank(instances: usize, queries: usize, seed: u64, perturb: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = rng.random_range(2..=3);
        let n = rng.random_range(5..=20);
        let prior = random_prior(&mut rng, 0.15..0.35)?;
        let data = noisy_instance(&mut rng, n, d);
        let exact = posterior(prior.clone(), data.clone())?;
        let full = ActiveSet::full(n);
        let naive = nystrom_naive_posterior(prior.clone(), &data, &full)?;
        let kernel = nystrom_kernel_posterior(prior, &data, &full)?;
        for q in uniform_points(&mut rng, queries, d) {
            let (mu, var) = (exact.mean_at(&q)?, exact.cov_at(&q, &q)?);
            for post in [&naive, &kernel] {
                worst = worst.max(rel(bump(post.mean_at(&q)?, perturb), mu));
                worst = worst.max(rel(bump(post.cov_at(&q, &q)?, perturb), var));
            }
        }
    }
    Ok(report(Identity::NystromFullRank, worst, 1e-6, start, format!("{instances} instances x {queries} queries, both variants")))
}

/// Monte Carlo check that `2cos(ωᵀx + b)cos(ωᵀx' + b)` and
/// `cos(ωᵀ(x − x'))` share their expectation, using the same `(ω, b)`
/// draws for both. `worst` is the largest `|mean difference| / SE`.
pub fn check_cosine_product(pairs: usize, samples: usize, seed: u64, perturb: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2;
    let kernel = CovarianceFunction::gaussian(1.0, 1.0)?;
    let basis = spectral_sample(&kernel, d, samples, seed)?;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let diffs: Vec<f64> = (0..samples)
            .map(|t| {
                let w = basis.omegas.row(t);
                let wx: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
                let wy: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
                let b = basis.phases[t];
                bump(2.0 * (wx + b).cos() * (wy + b).cos(), perturb) - (wx - wy).cos()
            })
            .collect();
        let mean = surropt::stats::mean(&diffs);
        let se = (surropt::stats::sample_variance(&diffs).unwrap_or(0.0) / samples as f64).sqrt();
        worst = worst.max(mean.abs() / se.max(f64::MIN_POSITIVE));
    }
    Ok(report(Identity::CosineProduct, worst, 3.0, start, format!("{pairs} pairs x {samples} samples, worst in standard errors")))
}

/// Run every identity at its default size; `perturbed` identities get a
/// 10% bump on the implementation side.
pub fn run_battery(seed: u64, perturbed: &[Identity]) -> Result<Vec<CheckReport>> {
    let p = |id: Identity| if perturbed.contains(&id) { 0.1 } else { 0.0 };
    let mut out = Vec::with_capacity(Identity::ALL.len());
    out.push(check_rls_krr(20, 100, seed, p(Identity::RlsKrr))?);
    out.push(check_kg_update(20, 20, seed, p(Identity::KgUpdate))?);
    out.push(check_woodbury(20, seed, p(Identity::Woodbury))?);
    let nys = check_nystrom_oracle(20, 20, seed, p(Identity::NystromOracle))?;
    let passed = nys.passed();
    out.push(CheckReport { passed, ..nys.posterior });
    out.push(check_nystrom_full_rank(20, 20, seed, p(Identity::NystromFullRank))?);
    out.push(check_cosine_product(10, 100_000, seed, p(Identity::CosineProduct))?);
    Ok(out)
}
