//! Least-squares fits of linear basis function models.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{design_matrix, FeatureMap};
use crate::error::{Error, Result};
use crate::gp::CovarianceFunction;
use crate::linalg::{lu_solve, numerical_rank, SpdFactor};
use crate::sim::{Dataset, ReplicationSet};

/// How the coefficients were estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FitKind {
    Ols,
    Rls { lambda: f64 },
    Gls,
}

/// `f̂(x) = βᵀφ(x)`.
#[derive(Clone, Debug)]
pub struct LinearSurrogate {
    pub features: Arc<dyn FeatureMap>,
    pub beta: DVector<f64>,
    pub fit_kind: FitKind,
}

impl LinearSurrogate {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.beta.dot(&self.features.evaluate(x))
    }

    /// Gradient of the fitted surface, when the features have a jacobian.
    pub fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        Some(self.features.jacobian(x)?.tr_mul(&self.beta))
    }
}

fn check_data(features: &dyn FeatureMap, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Domain("cannot fit on an empty dataset".into()));
    }
    if data.dimension != features.dim() {
        return Err(Error::Dimension { expected: features.dim(), got: data.dimension });
    }
    Ok(())
}

/// Minimum-residual solution of `Φβ ≈ y`, rejecting rank-deficient `Φ`.
fn least_squares(phi: DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, cols) = phi.shape();
    let svd = phi.svd(true, true);
    let rank = numerical_rank(&svd.singular_values, rows, cols);
    if rank < cols {
        return Err(Error::RankDeficient { rank, columns: cols });
    }
    let tol = svd.singular_values.max() * f64::EPSILON * rows.max(cols) as f64;
    svd.solve(y, tol).map_err(|e| Error::Singular(e.to_string()))
}

/// Ordinary least squares on the sample means.
pub fn fit_ols(features: Arc<dyn FeatureMap>, data: &Dataset) -> Result<LinearSurrogate> {
    check_data(features.as_ref(), data)?;
    let phi = design_matrix(features.as_ref(), &data.points());
    let beta = least_squares(phi, &DVector::from_vec(data.means()))?;
    Ok(LinearSurrogate { features, beta, fit_kind: FitKind::Ols })
}

/// Ridge regression `β̂_λ = Φᵀ(ΦΦᵀ + nλI)⁻¹ȳ`.
///
/// At `λ = 0` the `n × n` form is only usable when `Φ` has full row rank;
/// for a tall `Φ` of full column rank the ordinary least-squares limit is
/// returned instead.
pub fn fit_rls(features: Arc<dyn FeatureMap>, data: &Dataset, lambda: f64) -> Result<LinearSurrogate> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("ridge penalty must be nonnegative, got {lambda}")));
    }
    check_data(features.as_ref(), data)?;
    let n = data.len();
    let phi = design_matrix(features.as_ref(), &data.points());
    let y = DVector::from_vec(data.means());
    let beta = if lambda > 0.0 {
        let mut g = &phi * phi.transpose();
        for i in 0..n {
            g[(i, i)] += n as f64 * lambda;
        }
        phi.tr_mul(&SpdFactor::new(g)?.solve(&y))
    } else {
        let p = phi.ncols();
        let rank = numerical_rank(&phi.clone().singular_values(), n, p);
        if rank == n {
            let g = &phi * phi.transpose();
            phi.tr_mul(&lu_solve(&g, &y)?)
        } else if rank == p {
            least_squares(phi, &y)?
        } else {
            return Err(Error::Singular(format!("ΦΦᵀ is singular (rank {rank} < n = {n}) at λ = 0")));
        }
    };
    Ok(LinearSurrogate { features, beta, fit_kind: FitKind::Rls { lambda } })
}

/// Kernel ridge predictor `k(x)ᵀ(K + nλI)⁻¹ȳ`, factored once.
#[derive(Clone, Debug)]
pub struct KrrPredictor {
    kernel: CovarianceFunction,
    points: Vec<Vec<f64>>,
    weights: DVector<f64>,
}

impl KrrPredictor {
    pub fn new(kernel: CovarianceFunction, data: &Dataset, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Domain(format!("kernel ridge penalty must be positive, got {lambda}")));
        }
        if data.is_empty() {
            return Err(Error::Domain("cannot fit on an empty dataset".into()));
        }
        kernel.validate()?;
        let points = data.points();
        let n = points.len();
        let mut k = kernel.gram(&points);
        for i in 0..n {
            k[(i, i)] += n as f64 * lambda;
        }
        let weights = SpdFactor::new(k)?.solve(&DVector::from_vec(data.means()));
        Ok(Self { kernel, points, weights })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.kernel.cross(&self.points, x).dot(&self.weights)
    }
}

pub fn krr_predict(kernel: &CovarianceFunction, data: &Dataset, lambda: f64, x: &[f64]) -> Result<f64> {
    Ok(KrrPredictor::new(kernel.clone(), data, lambda)?.predict(x))
}

/// Per-replication covariance `V` of `(ε, ζ₁, …, ζ_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariance {
    v: DMatrix<f64>,
}

impl NoiseCovariance {
    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        if !v.is_square() {
            return Err(Error::Dimension { expected: v.nrows(), got: v.ncols() });
        }
        let scale = v.amax().max(f64::MIN_POSITIVE);
        if (&v - v.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Domain("noise covariance must be symmetric".into()));
        }
        if v.clone().cholesky().is_none() {
            return Err(Error::Domain("noise covariance must be positive definite".into()));
        }
        Ok(Self { v })
    }

    pub fn identity(d: usize) -> Self {
        Self { v: DMatrix::identity(d + 1, d + 1) }
    }

    /// Pooled within-point sample covariance of the `(y, g)` replication
    /// vectors.
    pub fn estimate_pooled(sets: &[ReplicationSet]) -> Result<Self> {
        let d = sets.first().map(|s| s.point.dim()).ok_or_else(|| Error::Domain("no replications".into()))?;
        let mut scatter = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut dof = 0usize;
        for set in sets {
            let grads = set
                .gradients
                .as_ref()
                .ok_or_else(|| Error::Capability("replications carry no gradients".into()))?;
            let r = set.outputs.len();
            let vecs: Vec<DVector<f64>> = set
                .outputs
                .iter()
                .zip(grads)
                .map(|(y, g)| DVector::from_iterator(d + 1, std::iter::once(*y).chain(g.iter().copied())))
                .collect();
            let mean = vecs.iter().fold(DVector::zeros(d + 1), |acc, v| acc + v) / r as f64;
            for v in &vecs {
                let e = v - &mean;
                scatter += &e * e.transpose();
            }
            dof += r - 1;
        }
        if dof == 0 {
            return Err(Error::Domain("pooled covariance needs some point with two replications".into()));
        }
        Self::new(scatter / dof as f64)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }
}

/// Stack `(ȳᵢ, ḡᵢ)` and `(φ(xᵢ)ᵀ; ∂φ(xᵢ)/∂x)` per point: value then `d`
/// partials.
fn augmented_system(features: &dyn FeatureMap, data: &Dataset) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_data(features, data)?;
    let d = data.dimension;
    let p = features.len();
    let n = data.len();
    let mut phi = DMatrix::zeros(n * (d + 1), p);
    let mut y = DVector::zeros(n * (d + 1));
    for (i, obs) in data.observations.iter().enumerate() {
        let g = obs.grad_mean.as_ref().ok_or_else(|| {
            Error::Capability(format!("observation {i} carries no gradient estimate"))
        })?;
        let jac = features
            .jacobian(&obs.point)
            .ok_or_else(|| Error::Capability("feature map has no jacobian".into()))?;
        let base = i * (d + 1);
        y[base] = obs.mean;
        phi.row_mut(base).tr_copy_from(&features.evaluate(&obs.point));
        for j in 0..d {
            y[base + 1 + j] = g[j];
            phi.row_mut(base + 1 + j).tr_copy_from(&jac.column(j));
        }
    }
    Ok((phi, y))
}

/// Generalized least squares on values and gradients. The whole-system
/// covariance is block diagonal with blocks `V / rᵢ`.
pub fn fit_gls_with_gradients(
    features: Arc<dyn FeatureMap>,
    data: &Dataset,
    v: &NoiseCovariance,
) -> Result<LinearSurrogate> {
    let d = data.dimension;
    if v.v.nrows() != d + 1 {
        return Err(Error::Dimension { expected: d + 1, got: v.v.nrows() });
    }
    let (mut phi, mut y) = augmented_system(features.as_ref(), data)?;
    // Whiten each block by √rᵢ · L⁻¹ with V = LLᵀ.
    let l = v.v.clone().cholesky().expect("validated positive definite");
    for (i, obs) in data.observations.iter().enumerate() {
        let rows = i * (d + 1)..(i + 1) * (d + 1);
        let s = (obs.reps as f64).sqrt();
        let mut block = phi.rows(rows.start, d + 1).into_owned();
        l.l_dirty().solve_lower_triangular_mut(&mut block);
        phi.rows_mut(rows.start, d + 1).copy_from(&(block * s));
        let mut yb = y.rows(rows.start, d + 1).into_owned();
        l.l_dirty().solve_lower_triangular_mut(&mut yb);
        y.rows_mut(rows.start, d + 1).copy_from(&(yb * s));
    }
    let beta = least_squares(phi, &y)?;
    Ok(LinearSurrogate { features, beta, fit_kind: FitKind::Gls })
}

/// Unweighted least squares on the same augmented system.
pub fn fit_ols_with_gradients(features: Arc<dyn FeatureMap>, data: &Dataset) -> Result<LinearSurrogate> {
    let (phi, y) = augmented_system(features.as_ref(), data)?;
    let beta = least_squares(phi, &y)?;
    Ok(LinearSurrogate { features, beta, fit_kind: FitKind::Ols })
}
