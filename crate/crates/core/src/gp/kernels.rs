//! Covariance functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, sq_dist, tracked_zeros};
use crate::lowrank::{NystromInduced, RffBasis};
use crate::surrogates::FeatureMap;

/// Supported Matérn smoothness values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn new(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(Self::Half),
            v if v == 1.5 => Ok(Self::ThreeHalves),
            v if v == 2.5 => Ok(Self::FiveHalves),
            v => Err(Error::Domain(format!("Matérn ν must be 1/2, 3/2 or 5/2, got {v}"))),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
        }
    }
}

/// A symmetric positive-semidefinite covariance function `K(x, x')`.
#[derive(Clone, Debug)]
pub enum CovarianceFunction {
    /// `τ² exp(−‖x − x'‖² / (2η²))`.
    Gaussian { tau: f64, eta: f64 },
    /// Half-integer Matérn closed forms.
    Matern { tau: f64, eta: f64, nu: MaternNu },
    /// Generalized integrated Brownian field on the nonnegative orthant.
    /// `theta[j]` holds `m_j + 2` positive weights.
    Gibf { orders: Vec<u8>, theta: Vec<Vec<f64>> },
    /// `φ(x)ᵀφ(x')`.
    InnerProduct(Arc<dyn FeatureMap>),
    /// `k_m(x)ᵀK_{m,m}⁻¹k_m(x')` over an active set.
    NystromInduced(Arc<NystromInduced>),
    /// `φ_m(x)ᵀφ_m(x')` with random Fourier features.
    RffInduced(Arc<RffBasis>),
}

/// Serializable form of the parametric kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelDescriptor {
    Gaussian { tau: f64, eta: f64 },
    Matern { tau: f64, eta: f64, nu: f64 },
    Gibf { orders: Vec<u8>, theta: Vec<Vec<f64>> },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

fn matern_profile(r: f64, tau: f64, eta: f64, nu: MaternNu) -> f64 {
    let t2 = tau * tau;
    match nu {
        MaternNu::Half => t2 * (-r / eta).exp(),
        MaternNu::ThreeHalves => {
            let s = 3f64.sqrt() * r / eta;
            t2 * (1.0 + s) * (-s).exp()
        }
        MaternNu::FiveHalves => {
            let s = 5f64.sqrt() * r / eta;
            t2 * (1.0 + s + 5.0 * r * r / (3.0 * eta * eta)) * (-s).exp()
        }
    }
}

const FACTORIAL: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];
const BINOMIAL: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 1.0]];

/// `∫₀^∞ (x − u)₊^m (x' − u)₊^m du`. Writing `s = min`, `δ = max − min`,
/// this is `∫₀^s a^m (δ + a)^m da = Σ_k C(m,k) δ^{m−k} s^{m+k+1} / (m+k+1)`.
fn truncated_power_integral(x: f64, y: f64, m: usize) -> f64 {
    let s = x.min(y);
    if s <= 0.0 {
        return 0.0;
    }
    let delta = x.max(y) - s;
    (0..=m)
        .map(|k| BINOMIAL[m][k] * delta.powi((m - k) as i32) * s.powi((m + k + 1) as i32) / (m + k + 1) as f64)
        .sum()
}

fn gibf_factor(x: f64, y: f64, m: usize, theta: &[f64]) -> f64 {
    let xy = x * y;
    let poly: f64 = (0..=m).map(|l| theta[l] * xy.powi(l as i32) / (FACTORIAL[l] * FACTORIAL[l])).sum();
    poly + theta[m + 1] * truncated_power_integral(x, y, m) / (FACTORIAL[m] * FACTORIAL[m])
}

fn gibf_value(x: &[f64], y: &[f64], orders: &[u8], theta: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(y)
        .zip(orders.iter().zip(theta))
        .map(|((a, b), (m, th))| gibf_factor(*a, *b, *m as usize, th))
        .product()
}

impl CovarianceFunction {
    pub fn gaussian(tau: f64, eta: f64) -> Result<Self> {
        let k = Self::Gaussian { tau, eta };
        k.validate()?;
        Ok(k)
    }

    pub fn matern(tau: f64, eta: f64, nu: f64) -> Result<Self> {
        let k = Self::Matern { tau, eta, nu: MaternNu::new(nu)? };
        k.validate()?;
        Ok(k)
    }

    pub fn gibf(orders: Vec<u8>, theta: Vec<Vec<f64>>) -> Result<Self> {
        let k = Self::Gibf { orders, theta };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gaussian { tau, eta } | Self::Matern { tau, eta, .. } => {
                positive("τ", *tau)?;
                positive("η", *eta)
            }
            Self::Gibf { orders, theta } => {
                if orders.len() != theta.len() {
                    return Err(Error::Dimension { expected: orders.len(), got: theta.len() });
                }
                for (m, th) in orders.iter().zip(theta) {
                    if *m > 2 {
                        return Err(Error::Domain(format!("GIBF order must be at most 2, got {m}")));
                    }
                    if th.len() != *m as usize + 2 {
                        return Err(Error::Dimension { expected: *m as usize + 2, got: th.len() });
                    }
                    for v in th {
                        positive("GIBF θ", *v)?;
                    }
                }
                Ok(())
            }
            Self::InnerProduct(_) | Self::NystromInduced(_) | Self::RffInduced(_) => Ok(()),
        }
    }

    /// Check that `x` lies in the kernel's domain.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if let Self::Gibf { orders, .. } = self {
            if x.len() != orders.len() {
                return Err(Error::Dimension { expected: orders.len(), got: x.len() });
            }
            if x.iter().any(|v| *v < 0.0) {
                return Err(Error::Domain(format!("GIBF needs nonnegative coordinates, got {x:?}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Self::Gaussian { tau, eta } => tau * tau * (-sq_dist(x, y) / (2.0 * eta * eta)).exp(),
            Self::Matern { tau, eta, nu } => matern_profile(dist(x, y), *tau, *eta, *nu),
            Self::Gibf { orders, theta } => gibf_value(x, y, orders, theta),
            Self::InnerProduct(f) => f.evaluate(x).dot(&f.evaluate(y)),
            Self::NystromInduced(k) => k.eval(x, y),
            Self::RffInduced(b) => b.kernel_estimate(x, y),
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, Self::Gaussian { .. } | Self::Matern { .. })
    }

    /// Gram matrix over `points`, filled symmetrically.
    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = tracked_zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// `(K(x₁, x), …, K(x_n, x))`.
    pub fn cross(&self, points: &[Vec<f64>], x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(points.len(), points.iter().map(|p| self.eval(p, x)))
    }

    /// `|rows| × |cols|` cross-covariance matrix.
    pub fn cross_matrix(&self, rows: &[Vec<f64>], cols: &[Vec<f64>]) -> DMatrix<f64> {
        let mut k = tracked_zeros(rows.len(), cols.len());
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                k[(i, j)] = self.eval(r, c);
            }
        }
        k
    }

    pub fn descriptor(&self) -> Option<KernelDescriptor> {
        match self {
            Self::Gaussian { tau, eta } => Some(KernelDescriptor::Gaussian { tau: *tau, eta: *eta }),
            Self::Matern { tau, eta, nu } => Some(KernelDescriptor::Matern { tau: *tau, eta: *eta, nu: nu.value() }),
            Self::Gibf { orders, theta } => Some(KernelDescriptor::Gibf { orders: orders.clone(), theta: theta.clone() }),
            _ => None,
        }
    }

    pub fn from_descriptor(d: &KernelDescriptor) -> Result<Self> {
        match d {
            KernelDescriptor::Gaussian { tau, eta } => Self::gaussian(*tau, *eta),
            KernelDescriptor::Matern { tau, eta, nu } => Self::matern(*tau, *eta, *nu),
            KernelDescriptor::Gibf { orders, theta } => Self::gibf(orders.clone(), theta.clone()),
        }
    }
}

pub fn kernel_gaussian(x: &[f64], y: &[f64], tau: f64, eta: f64) -> Result<f64> {
    Ok(CovarianceFunction::gaussian(tau, eta)?.eval(x, y))
}

pub fn kernel_matern(x: &[f64], y: &[f64], tau: f64, eta: f64, nu: f64) -> Result<f64> {
    Ok(CovarianceFunction::matern(tau, eta, nu)?.eval(x, y))
}

pub fn kernel_gibf(x: &[f64], y: &[f64], orders: &[u8], theta: &[Vec<f64>]) -> Result<f64> {
    let k = CovarianceFunction::gibf(orders.to_vec(), theta.to_vec())?;
    k.check_point(x)?;
    k.check_point(y)?;
    Ok(k.eval(x, y))
}

/// Matérn 5/2 against the Gaussian kernel at one distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaternGap {
    pub distance: f64,
    pub matern: f64,
    pub gaussian: f64,
    pub gap: f64,
}

/// Compare the smoothest supported Matérn kernel with its Gaussian limit.
pub fn matern_limit_check(tau: f64, eta: f64, distances: &[f64]) -> Vec<MaternGap> {
    distances
        .iter()
        .map(|&r| {
            let matern = matern_profile(r, tau, eta, MaternNu::FiveHalves);
            let gaussian = tau * tau * (-r * r / (2.0 * eta * eta)).exp();
            MaternGap { distance: r, matern, gaussian, gap: (matern - gaussian).abs() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_values() {
        assert_eq!(kernel_gaussian(&[0.3, 1.0], &[0.3, 1.0], 2.0, 0.7).unwrap(), 4.0);
        assert!((kernel_gaussian(&[0.0], &[1.0], 1.0, 1.0).unwrap() - 0.6065307).abs() < 1e-7);
        assert!(kernel_gaussian(&[0.0], &[1.0], 0.0, 1.0).is_err());
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let v = kernel_gaussian(&[0.0], &[k as f64 * 0.2], 1.0, 1.0).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn matern_values() {
        assert!((kernel_matern(&[0.0], &[1.0], 1.0, 1.0, 0.5).unwrap() - 0.3678794).abs() < 1e-7);
        assert_eq!(kernel_matern(&[2.0], &[2.0], 1.5, 1.0, 1.5).unwrap(), 2.25);
        assert!((kernel_matern(&[0.0], &[1.0], 1.0, 1.0, 2.5).unwrap() - 0.52399).abs() < 1e-5);
        assert!(kernel_matern(&[0.0], &[1.0], 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn gibf_values() {
        assert_eq!(kernel_gibf(&[2.0], &[3.0], &[0], &[vec![1.0, 1.0]]).unwrap(), 3.0);
        for m in 0..=2u8 {
            let theta = vec![(0..m + 2).map(|l| 0.5 + l as f64).collect::<Vec<_>>()];
            assert_eq!(kernel_gibf(&[0.0], &[1.7], &[m], &theta).unwrap(), 0.5);
        }
        assert!(kernel_gibf(&[-1.0], &[1.0], &[0], &[vec![1.0, 1.0]]).is_err());
        assert!(kernel_gibf(&[1.0], &[1.0], &[3], &[vec![1.0; 5]]).is_err());
    }

    #[test]
    fn gibf_tensor_product() {
        let th = vec![vec![0.5, 1.0, 2.0], vec![1.0, 0.3, 0.2, 0.7]];
        let k = kernel_gibf(&[0.4, 1.2], &[0.9, 0.5], &[1, 2], &th).unwrap();
        let k1 = kernel_gibf(&[0.4], &[0.9], &[1], &th[..1]).unwrap();
        let k2 = kernel_gibf(&[1.2], &[0.5], &[2], &th[1..]).unwrap();
        assert!((k - k1 * k2).abs() < 1e-15);
    }

    #[test]
    fn gibf_integral_matches_quadrature() {
        for m in 0..=2usize {
            for (x, y) in [(0.3, 1.1), (2.0, 0.5), (1.0, 1.0)] {
                let n = 200_000;
                let s = f64::min(x, y);
                let h = s / n as f64;
                let quad: f64 = (0..n)
                    .map(|i| {
                        let u = (i as f64 + 0.5) * h;
                        ((x - u) * (y - u)).powi(m as i32)
                    })
                    .sum::<f64>()
                    * h;
                assert!((quad - truncated_power_integral(x, y, m)).abs() < 1e-8, "m={m}");
            }
        }
    }

    #[test]
    fn gibf_order_zero_gram_is_min_form() {
        let pts: Vec<Vec<f64>> = vec![vec![0.2], vec![1.5], vec![0.7], vec![3.0]];
        let k = CovarianceFunction::gibf(vec![0], vec![vec![0.4, 1.3]]).unwrap();
        let g = k.gram(&pts);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g[(i, j)], 0.4 + 1.3 * pts[i][0].min(pts[j][0]));
            }
        }
    }

    #[test]
    fn matern_gap_report() {
        let r = matern_limit_check(1.0, 1.0, &[0.0, 1.0, 50.0]);
        assert_eq!(r[0].gap, 0.0);
        assert!((r[1].gap - 0.0825).abs() < 1e-4);
        assert!(r[2].gap < 1e-12);
    }

    fn min_eig(m: DMatrix<f64>) -> f64 {
        m.symmetric_eigenvalues().min()
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let kernels = [
            CovarianceFunction::gaussian(1.3, 0.4).unwrap(),
            CovarianceFunction::matern(1.0, 0.3, 0.5).unwrap(),
            CovarianceFunction::matern(0.7, 0.6, 1.5).unwrap(),
            CovarianceFunction::matern(1.1, 0.5, 2.5).unwrap(),
            CovarianceFunction::gibf(vec![0, 1, 2], vec![vec![1.0, 0.5], vec![0.3, 1.0, 2.0], vec![1.0, 1.0, 1.0, 1.0]])
                .unwrap(),
        ];
        for k in &kernels {
            for _ in 0..30 {
                let n = rng.random_range(2..=25);
                let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
                let g = k.gram(&pts);
                assert!(min_eig(g.clone()) >= -1e-8 * g.trace(), "{k:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn kernels_are_symmetric(x in prop::collection::vec(0.0f64..3.0, 2), y in prop::collection::vec(0.0f64..3.0, 2)) {
            for k in [
                CovarianceFunction::gaussian(1.0, 0.5).unwrap(),
                CovarianceFunction::matern(1.0, 0.5, 1.5).unwrap(),
                CovarianceFunction::gibf(vec![1, 2], vec![vec![1.0, 1.0, 1.0], vec![0.5, 0.5, 0.5, 0.5]]).unwrap(),
            ] {
                prop_assert_eq!(k.eval(&x, &y), k.eval(&y, &x));
            }
        }
    }
}
