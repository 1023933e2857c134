use nalgebra::{DMatrix, DVector};

use super::GpPrior;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::sim::Dataset;

/// Relative tolerance below which a negative variance is floating-point
/// noise rather than a modelling error.
pub const VARIANCE_TOLERANCE: f64 = 1e-8;

/// Clamp `v` to zero when it is negative within tolerance of `prior_var`.
pub fn clamp_variance(v: f64, prior_var: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_TOLERANCE * prior_var.abs() {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance { value: v })
    }
}

/// Posterior mean and covariance functions of a Gaussian process.
pub trait Posterior {
    fn mean_at(&self, x: &[f64]) -> Result<f64>;

    fn cov_at(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    /// Prior variance `K(x, x)`, the scale for variance clamping.
    fn prior_var(&self, x: &[f64]) -> f64;

    fn var_at(&self, x: &[f64]) -> Result<f64> {
        clamp_variance(self.cov_at(x, x)?, self.prior_var(x))
    }
}

impl<T: Posterior + ?Sized> Posterior for &T {
    fn mean_at(&self, x: &[f64]) -> Result<f64> {
        (**self).mean_at(x)
    }

    fn cov_at(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        (**self).cov_at(x, y)
    }

    fn prior_var(&self, x: &[f64]) -> f64 {
        (**self).prior_var(x)
    }

    fn var_at(&self, x: &[f64]) -> Result<f64> {
        (**self).var_at(x)
    }
}

/// Exact posterior `(μₙ, Kₙ)` given aggregated data with known noise.
///
/// `μₙ(x) = μ(x) + k(x)ᵀ(K + Σ)⁻¹(ȳ − μ)` and
/// `Kₙ(x, x') = K(x, x') − k(x)ᵀ(K + Σ)⁻¹k(x')`.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    prior: GpPrior,
    data: Dataset,
    points: Vec<Vec<f64>>,
    factor: SpdFactor,
    alpha: DVector<f64>,
}

impl GpPosterior {
    pub fn new(prior: GpPrior, data: Dataset) -> Result<Self> {
        prior.cov.validate()?;
        let noise = data.noise_diag()?;
        let points = data.points();
        for p in &points {
            prior.cov.check_point(p)?;
        }
        let mut k = prior.cov.gram(&points);
        for (i, s) in noise.iter().enumerate() {
            k[(i, i)] += s;
        }
        let factor = SpdFactor::new(k)?;
        let resid = DVector::from_iterator(
            points.len(),
            data.observations.iter().map(|o| o.mean - prior.mean.eval(&o.point)),
        );
        let alpha = factor.solve(&resid);
        Ok(Self { prior, data, points, factor, alpha })
    }

    pub fn prior(&self) -> &GpPrior {
        &self.prior
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// `(K + Σ)⁻¹(ȳ − μ)`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `L⁻¹k(x)` with `K + Σ = LLᵀ`.
    pub fn whitened_cross(&self, x: &[f64]) -> DVector<f64> {
        self.factor.half_solve(&self.prior.cov.cross(&self.points, x))
    }

    /// Posterior means and variances at many points, sharing one
    /// triangular solve.
    pub fn mean_var_batch(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let kx = self.prior.cov.cross_matrix(&self.points, xs);
        let means = xs
            .iter()
            .enumerate()
            .map(|(j, x)| self.prior.mean.eval(x) + kx.column(j).dot(&self.alpha))
            .collect();
        let v = self.factor.half_solve_matrix(&kx);
        let vars = xs
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let kxx = self.prior.cov.eval(x, x);
                clamp_variance(kxx - v.column(j).norm_squared(), kxx)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((means, vars))
    }

    /// Posterior covariance matrix `Kₙ(xs, xs)`.
    pub fn cov_matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let v = self.factor.half_solve_matrix(&self.prior.cov.cross_matrix(&self.points, xs));
        self.prior.cov.gram(xs) - v.tr_mul(&v)
    }
}

impl Posterior for GpPosterior {
    fn mean_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.prior.mean.eval(x) + self.prior.cov.cross(&self.points, x).dot(&self.alpha))
    }

    fn cov_at(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let vx = self.whitened_cross(x);
        let vy = if x == y { vx.clone() } else { self.whitened_cross(y) };
        Ok(self.prior.cov.eval(x, y) - vx.dot(&vy))
    }

    fn prior_var(&self, x: &[f64]) -> f64 {
        self.prior.cov.eval(x, x)
    }
}

pub fn posterior(prior: GpPrior, data: Dataset) -> Result<GpPosterior> {
    GpPosterior::new(prior, data)
}
