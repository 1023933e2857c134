//! Low-rank approximate posteriors.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ActiveSet, NystromInduced, RffBasis};
use crate::error::{Error, Result};
use crate::gp::{clamp_variance, GpPrior, Posterior};
use crate::linalg::{tracked_zeros, SpdFactor};
use crate::sim::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxVariant {
    NystromNaive,
    NystromKernel,
    Rff,
}

impl ApproxVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::NystromNaive => "nystrom_naive",
            Self::NystromKernel => "nystrom_kernel",
            Self::Rff => "rff",
        }
    }
}

#[derive(Debug)]
enum Inner {
    /// Exact cross-covariances `k(x)` against `(K̃ + Σ)⁻¹` via Woodbury.
    Naive {
        points: Vec<Vec<f64>>,
        sigma_inv: DVector<f64>,
        /// `Σ⁻¹K_{n,m}`.
        sinv_knm: DMatrix<f64>,
        /// `Q = K_{m,m} + K_{m,n}Σ⁻¹K_{n,m}`.
        q: SpdFactor,
        /// `(K̃ + Σ)⁻¹(ȳ − μ)`.
        weights: DVector<f64>,
    },
    /// Posterior of the induced-kernel process.
    Kernel { induced: NystromInduced, q: SpdFactor, beta: DVector<f64> },
    /// Posterior of the random-feature process.
    Rff { basis: Arc<RffBasis>, a: SpdFactor, beta: DVector<f64> },
    /// The same posterior through `(ΦΦᵀ + Σ)⁻¹`, used when `m > n`.
    RffDual { basis: Arc<RffBasis>, phi: DMatrix<f64>, g: SpdFactor, beta: DVector<f64> },
}

/// An approximate posterior built in `O(m²n)` time.
///
/// The induced-kernel and random-feature variants return
/// `Kₙ(x, x') = K(x, x') − K̃(x, x') + K̃ₙ(x, x')`, the posterior covariance
/// of the low-rank process with its prior term replaced by the exact kernel.
/// They agree with the exact posterior when the approximation is exact on
/// the data. The naive variant can produce negative variances; they are
/// reported unclamped and flagged. The random-feature variance is clamped
/// at zero since `K − K̃` is only nonnegative in expectation; the raw value
/// stays available through [`ApproxPosterior::var_report`].
#[derive(Debug)]
pub struct ApproxPosterior {
    variant: ApproxVariant,
    prior: GpPrior,
    n: usize,
    m: usize,
    inner: Inner,
    negative_seen: AtomicBool,
}

/// A variance together with whether it came out negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceReport {
    pub value: f64,
    pub negative: bool,
}

fn residuals(prior: &GpPrior, data: &Dataset) -> DVector<f64> {
    DVector::from_iterator(data.len(), data.observations.iter().map(|o| o.mean - prior.mean.eval(&o.point)))
}

fn inverse_noise(data: &Dataset) -> Result<DVector<f64>> {
    let noise = data.noise_diag()?;
    if let Some(i) = noise.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Domain(format!("observation {i} has zero noise; low-rank posteriors need Σ > 0")));
    }
    Ok(DVector::from_iterator(noise.len(), noise.iter().map(|s| 1.0 / s)))
}

/// `n × m` cross-covariance between `points` and `anchors`.
fn cross_block(prior: &GpPrior, points: &[Vec<f64>], anchors: &[Vec<f64>]) -> DMatrix<f64> {
    let mut k = tracked_zeros(points.len(), anchors.len());
    for (i, p) in points.iter().enumerate() {
        for (j, a) in anchors.iter().enumerate() {
            k[(i, j)] = prior.cov.eval(p, a);
        }
    }
    k
}

/// `B + Fᵀ diag(w) F` without forming anything `n × n`.
fn weighted_gram(base: DMatrix<f64>, f: &DMatrix<f64>, w: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut wf = tracked_zeros(f.nrows(), f.ncols());
    for i in 0..f.nrows() {
        wf.row_mut(i).copy_from(&(f.row(i) * w[i]));
    }
    (base + f.tr_mul(&wf), wf)
}

fn active_points(data: &Dataset, active: &ActiveSet) -> Result<Vec<Vec<f64>>> {
    active
        .indices()
        .iter()
        .map(|&i| data.observations.get(i).map(|o| o.point.to_vec()).ok_or_else(|| Error::Domain(format!("active index {i} out of range"))))
        .collect()
}

/// The exact posterior formulas with `K` replaced by `K̃ = K_{n,m}K_{m,m}⁻¹K_{m,n}`
/// on the data, evaluated through the Woodbury identity.
pub fn nystrom_naive_posterior(prior: GpPrior, data: &Dataset, active: &ActiveSet) -> Result<ApproxPosterior> {
    let sigma_inv = inverse_noise(data)?;
    let points = data.points();
    let anchors = active_points(data, active)?;
    let knm = cross_block(&prior, &points, &anchors);
    let (q, sinv_knm) = weighted_gram(prior.cov.gram(&anchors), &knm, &sigma_inv);
    let q = SpdFactor::new(q)?;
    let r = residuals(&prior, data);
    let sinv_r = r.component_mul(&sigma_inv);
    let weights = &sinv_r - &sinv_knm * q.solve(&knm.tr_mul(&sinv_r));
    let (n, m) = (points.len(), anchors.len());
    Ok(ApproxPosterior {
        variant: ApproxVariant::NystromNaive,
        prior,
        n,
        m,
        inner: Inner::Naive { points, sigma_inv, sinv_knm, q, weights },
        negative_seen: AtomicBool::new(false),
    })
}

/// Posterior of the process with the induced kernel `K̃`:
/// mean `μ(x) + k_m(x)ᵀQ⁻¹K_{m,n}Σ⁻¹(ȳ − μ)`.
pub fn nystrom_kernel_posterior(prior: GpPrior, data: &Dataset, active: &ActiveSet) -> Result<ApproxPosterior> {
    let sigma_inv = inverse_noise(data)?;
    let points = data.points();
    let anchors = active_points(data, active)?;
    let induced = NystromInduced::new(prior.cov.clone(), anchors.clone())?;
    let knm = cross_block(&prior, &points, &anchors);
    let (q, sinv_knm) = weighted_gram(prior.cov.gram(&anchors), &knm, &sigma_inv);
    let q = SpdFactor::new(q)?;
    let beta = q.solve(&sinv_knm.tr_mul(&residuals(&prior, data)));
    let (n, m) = (points.len(), anchors.len());
    Ok(ApproxPosterior {
        variant: ApproxVariant::NystromKernel,
        prior,
        n,
        m,
        inner: Inner::Kernel { induced, q, beta },
        negative_seen: AtomicBool::new(false),
    })
}

/// Posterior of the random-feature process:
/// mean `μ(x) + φ_m(x)ᵀ(I + ΦᵀΣ⁻¹Φ)⁻¹ΦᵀΣ⁻¹(ȳ − μ)`.
pub fn rff_posterior(prior: GpPrior, data: &Dataset, basis: Arc<RffBasis>) -> Result<ApproxPosterior> {
    let sigma_inv = inverse_noise(data)?;
    if basis.descriptor().dim != data.dimension {
        return Err(Error::Dimension { expected: data.dimension, got: basis.descriptor().dim });
    }
    let phi = basis.feature_matrix(&data.points());
    let m = basis.m();
    let r = residuals(&prior, data);
    if m > data.len() {
        let mut g = &phi * phi.transpose();
        for (i, s) in sigma_inv.iter().enumerate() {
            g[(i, i)] += 1.0 / s;
        }
        let g = SpdFactor::new(g)?;
        let beta = phi.tr_mul(&g.solve(&r));
        return Ok(ApproxPosterior {
            variant: ApproxVariant::Rff,
            prior,
            n: data.len(),
            m,
            inner: Inner::RffDual { basis, phi, g, beta },
            negative_seen: AtomicBool::new(false),
        });
    }
    let (a, sinv_phi) = weighted_gram(DMatrix::identity(m, m), &phi, &sigma_inv);
    let a = SpdFactor::new(a)?;
    let beta = a.solve(&sinv_phi.tr_mul(&r));
    Ok(ApproxPosterior {
        variant: ApproxVariant::Rff,
        prior,
        n: data.len(),
        m,
        inner: Inner::Rff { basis, a, beta },
        negative_seen: AtomicBool::new(false),
    })
}

impl ApproxPosterior {
    pub fn variant(&self) -> ApproxVariant {
        self.variant
    }

    /// `(n, m)`.
    pub fn size(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn prior(&self) -> &GpPrior {
        &self.prior
    }

    /// Whether any variance query has come out negative.
    pub fn negative_variance_flagged(&self) -> bool {
        self.negative_seen.load(Ordering::Relaxed)
    }

    /// Raw variance with its sign flag, without clamping.
    pub fn var_report(&self, x: &[f64]) -> Result<VarianceReport> {
        let value = self.cov_at(x, x)?;
        let negative = value < 0.0;
        if negative {
            self.negative_seen.store(true, Ordering::Relaxed);
        }
        Ok(VarianceReport { value, negative })
    }
}

impl Posterior for ApproxPosterior {
    fn mean_at(&self, x: &[f64]) -> Result<f64> {
        let mu = self.prior.mean.eval(x);
        Ok(match &self.inner {
            Inner::Naive { points, weights, .. } => mu + self.prior.cov.cross(points, x).dot(weights),
            Inner::Kernel { induced, beta, .. } => mu + self.prior.cov.cross(induced.anchors(), x).dot(beta),
            Inner::Rff { basis, beta, .. } | Inner::RffDual { basis, beta, .. } => mu + basis.features(x).dot(beta),
        })
    }

    fn cov_at(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let kxy = self.prior.cov.eval(x, y);
        Ok(match &self.inner {
            Inner::Naive { points, sigma_inv, sinv_knm, q, .. } => {
                let kx = self.prior.cov.cross(points, x);
                let ky = self.prior.cov.cross(points, y);
                let direct = kx.component_mul(sigma_inv).dot(&ky);
                let ux = q.half_solve(&sinv_knm.tr_mul(&kx));
                let uy = q.half_solve(&sinv_knm.tr_mul(&ky));
                kxy - direct + ux.dot(&uy)
            }
            Inner::Kernel { induced, q, .. } => {
                let kx = self.prior.cov.cross(induced.anchors(), x);
                let ky = self.prior.cov.cross(induced.anchors(), y);
                let low_rank = induced.whitened(x).dot(&induced.whitened(y));
                kxy - low_rank + q.half_solve(&kx).dot(&q.half_solve(&ky))
            }
            Inner::Rff { basis, a, .. } => {
                let fx = basis.features(x);
                let fy = basis.features(y);
                kxy - fx.dot(&fy) + a.half_solve(&fx).dot(&a.half_solve(&fy))
            }
            Inner::RffDual { basis, phi, g, .. } => {
                let px = g.half_solve(&(phi * basis.features(x)));
                let py = g.half_solve(&(phi * basis.features(y)));
                kxy - px.dot(&py)
            }
        })
    }

    fn prior_var(&self, x: &[f64]) -> f64 {
        self.prior.cov.eval(x, x)
    }

    fn var_at(&self, x: &[f64]) -> Result<f64> {
        let report = self.var_report(x)?;
        match self.variant {
            ApproxVariant::NystromNaive => Ok(report.value),
            ApproxVariant::NystromKernel => clamp_variance(report.value, self.prior_var(x)),
            // `K(x, x) − φ(x)ᵀφ(x)` is a Monte Carlo residual of either sign.
            ApproxVariant::Rff => Ok(report.value.max(0.0)),
        }
    }
}
