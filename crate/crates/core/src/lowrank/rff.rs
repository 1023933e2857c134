//! Random Fourier features for stationary kernels.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{CovarianceFunction, KernelDescriptor};
use crate::linalg::tracked_zeros;
use crate::stats::std_normal;

/// What is needed to regenerate a basis: the draws are a function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RffDescriptor {
    pub seed: u64,
    pub m: usize,
    pub dim: usize,
    pub kernel: KernelDescriptor,
}

/// `φ_m(x) = √(2k₀/m) · cos(Ωx + b)` with frequencies drawn from the
/// kernel's spectral measure and phases uniform on `(0, 2π)`.
#[derive(Clone, Debug)]
pub struct RffBasis {
    descriptor: RffDescriptor,
    /// `m × d`, one frequency per row.
    pub omegas: DMatrix<f64>,
    pub phases: Vec<f64>,
    pub k0: f64,
}

/// Draw a basis of `m` features for a `dim`-dimensional stationary kernel.
///
/// Gaussian kernels use `ω ~ N(0, η⁻²I)`; Matérn kernels use a multivariate
/// Student-t with `2ν` degrees of freedom and scale `1/η`.
pub fn spectral_sample(kernel: &CovarianceFunction, dim: usize, m: usize, seed: u64) -> Result<RffBasis> {
    if m == 0 {
        return Err(Error::Domain("need at least one random feature".into()));
    }
    let (tau, eta, dof) = match kernel {
        CovarianceFunction::Gaussian { tau, eta } => (*tau, *eta, None),
        CovarianceFunction::Matern { tau, eta, nu } => (*tau, *eta, Some(2.0 * nu.value())),
        other => {
            return Err(Error::Capability(format!(
                "random features need a stationary kernel, got {}",
                match other {
                    CovarianceFunction::Gibf { .. } => "GIBF",
                    _ => "a non-parametric kernel",
                }
            )))
        }
    };
    kernel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = dof.map(|k| ChiSquared::new(k).expect("positive degrees of freedom"));
    let mut omegas = DMatrix::zeros(m, dim);
    for t in 0..m {
        let scale = match &chi {
            None => 1.0 / eta,
            Some(c) => {
                let w: f64 = c.sample(&mut rng);
                1.0 / (eta * (w / dof.unwrap()).sqrt())
            }
        };
        for j in 0..dim {
            omegas[(t, j)] = scale * std_normal(&mut rng);
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let phases = (0..m)
        .map(|_| loop {
            let b = rng.random_range(0.0..two_pi);
            if b > 0.0 {
                break b;
            }
        })
        .collect();
    let descriptor = RffDescriptor { seed, m, dim, kernel: kernel.descriptor().expect("parametric kernel") };
    Ok(RffBasis { descriptor, omegas, phases, k0: tau * tau })
}

/// As [`spectral_sample`], with the seed drawn from `rng`.
pub fn spectral_sample_with<R: Rng + ?Sized>(
    kernel: &CovarianceFunction,
    dim: usize,
    m: usize,
    rng: &mut R,
) -> Result<RffBasis> {
    spectral_sample(kernel, dim, m, rng.random())
}

impl RffBasis {
    pub fn from_descriptor(d: &RffDescriptor) -> Result<Self> {
        spectral_sample(&CovarianceFunction::from_descriptor(&d.kernel)?, d.dim, d.m, d.seed)
    }

    pub fn descriptor(&self) -> &RffDescriptor {
        &self.descriptor
    }

    pub fn m(&self) -> usize {
        self.phases.len()
    }

    pub fn features(&self, x: &[f64]) -> DVector<f64> {
        let amp = (2.0 * self.k0 / self.m() as f64).sqrt();
        DVector::from_iterator(
            self.m(),
            self.phases.iter().enumerate().map(|(t, b)| {
                let wx: f64 = self.omegas.row(t).iter().zip(x).map(|(w, v)| w * v).sum();
                amp * (wx + b).cos()
            }),
        )
    }

    /// `n × m` matrix with rows `φ_m(xᵢ)ᵀ`.
    pub fn feature_matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let mut phi = tracked_zeros(points.len(), self.m());
        for (i, p) in points.iter().enumerate() {
            phi.row_mut(i).tr_copy_from(&self.features(p));
        }
        phi
    }

    /// `φ_m(x)ᵀφ_m(x')`.
    pub fn kernel_estimate(&self, x: &[f64], y: &[f64]) -> f64 {
        self.features(x).dot(&self.features(y))
    }
}

pub fn rff_kernel_estimate(basis: &RffBasis, x: &[f64], y: &[f64]) -> f64 {
    basis.kernel_estimate(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian() -> CovarianceFunction {
        CovarianceFunction::gaussian(1.0, 1.0).unwrap()
    }

    #[test]
    fn gaussian_frequencies_have_unit_covariance() {
        let b = spectral_sample(&gaussian(), 3, 10_000, 1).unwrap();
        for j in 0..3 {
            let col = b.omegas.column(j);
            let mean = col.mean();
            let var = col.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / 9_999.0;
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn phases_pass_chi_square() {
        let b = spectral_sample(&gaussian(), 1, 10_000, 2).unwrap();
        let mut bins = [0usize; 10];
        for p in &b.phases {
            assert!(*p > 0.0 && *p < 2.0 * std::f64::consts::PI);
            bins[(p / (2.0 * std::f64::consts::PI) * 10.0) as usize] += 1;
        }
        let chi2: f64 = bins.iter().map(|c| (*c as f64 - 1000.0).powi(2) / 1000.0).sum();
        // 99th percentile of χ² with 9 degrees of freedom.
        assert!(chi2 < 21.666, "χ² = {chi2}");
    }

    #[test]
    fn seeded_basis_is_reproducible() {
        let a = spectral_sample(&gaussian(), 2, 50, 7).unwrap();
        let b = RffBasis::from_descriptor(a.descriptor()).unwrap();
        assert_eq!(a.omegas, b.omegas);
        assert_eq!(a.phases, b.phases);
    }

    #[test]
    fn gibf_is_rejected() {
        let k = CovarianceFunction::gibf(vec![0], vec![vec![1.0, 1.0]]).unwrap();
        assert!(matches!(spectral_sample(&k, 1, 10, 0), Err(Error::Capability(_))));
    }

    #[test]
    fn estimate_at_origin_is_unbiased() {
        let k0 = 2.25;
        let k = CovarianceFunction::gaussian(1.5, 0.5).unwrap();
        let vals: Vec<f64> = (0..1000).map(|s| spectral_sample(&k, 2, 5, s).unwrap().kernel_estimate(&[0.0, 0.0], &[0.0, 0.0])).collect();
        let mean = crate::stats::mean(&vals);
        let se = (crate::stats::sample_variance(&vals).unwrap() / 1000.0).sqrt();
        assert!((mean - k0).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn estimate_converges_and_is_symmetric() {
        let b = spectral_sample(&gaussian(), 1, 10_000, 3).unwrap();
        let v = b.kernel_estimate(&[0.2], &[1.2]);
        assert!((v - (-0.5f64).exp()).abs() < 0.03);
        assert_eq!(b.kernel_estimate(&[0.2], &[1.2]), b.kernel_estimate(&[1.2], &[0.2]));
    }

    #[test]
    fn matern_estimate_converges() {
        for nu in [0.5, 1.5, 2.5] {
            let k = CovarianceFunction::matern(1.0, 0.8, nu).unwrap();
            let b = spectral_sample(&k, 2, 20_000, 4).unwrap();
            let (x, y) = ([0.1, 0.3], [0.6, -0.2]);
            assert!((b.kernel_estimate(&x, &y) - k.eval(&x, &y)).abs() < 0.03, "ν={nu}");
        }
    }
}
