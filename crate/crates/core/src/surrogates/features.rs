//! Feature maps `φ: Rᵈ → Rᵖ` for linear basis function models.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist;

/// A scalar function of a design point, such as a stylized model `ψ`.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A vector of basis functions evaluated at a point.
pub trait FeatureMap: Send + Sync + fmt::Debug {
    /// Input dimension `d`.
    fn dim(&self) -> usize;

    /// Feature count `p`.
    fn len(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> DVector<f64>;

    /// The `p × d` matrix of partial derivatives `∂φ_k/∂x_j`, if available.
    fn jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn descriptor(&self) -> FeatureDescriptor;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serializable description of a feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureDescriptor {
    Polynomial { dim: usize, order: u8 },
    Rbf { centers: Vec<Vec<f64>>, radial: RadialKind },
    /// A base map followed by one named scalar feature.
    Augmented { base: Box<FeatureDescriptor>, psi: String },
}

impl FeatureDescriptor {
    /// Rebuild the map. Named stylized features are looked up with `resolve`.
    pub fn build(&self, resolve: &dyn Fn(&str) -> Option<ScalarFn>) -> Result<Arc<dyn FeatureMap>> {
        Ok(match self {
            FeatureDescriptor::Polynomial { dim, order } => Arc::new(Polynomial::new(*dim, *order)?),
            FeatureDescriptor::Rbf { centers, radial } => Arc::new(Rbf::new(centers.clone(), *radial)?),
            FeatureDescriptor::Augmented { base, psi } => {
                let f = resolve(psi).ok_or_else(|| Error::Parse(format!("unknown stylized feature '{psi}'")))?;
                Arc::new(Augmented::new(base.build(resolve)?, psi, f))
            }
        })
    }
}

/// Polynomial of order one or two. Order two includes each product
/// `x_j x_k` once, with `j ≤ k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    order: u8,
}

impl Polynomial {
    pub fn new(dim: usize, order: u8) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(Error::Domain(format!("polynomial order must be 1 or 2, got {order}")));
        }
        Ok(Self { dim, order })
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dim).flat_map(move |j| (j..self.dim).map(move |k| (j, k)))
    }
}

pub fn polynomial_features(dim: usize, order: u8) -> Result<Arc<dyn FeatureMap>> {
    Ok(Arc::new(Polynomial::new(dim, order)?))
}

impl FeatureMap for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        let d = self.dim;
        match self.order {
            1 => 1 + d,
            _ => 1 + d + d * (d + 1) / 2,
        }
    }

    fn evaluate(&self, x: &[f64]) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(1.0);
        v.extend_from_slice(&x[..self.dim]);
        if self.order == 2 {
            v.extend(self.pairs().map(|(j, k)| x[j] * x[k]));
        }
        DVector::from_vec(v)
    }

    fn jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.dim;
        let mut jac = DMatrix::zeros(self.len(), d);
        for j in 0..d {
            jac[(1 + j, j)] = 1.0;
        }
        if self.order == 2 {
            for (row, (j, k)) in self.pairs().enumerate() {
                let r = 1 + d + row;
                jac[(r, j)] += x[k];
                jac[(r, k)] += x[j];
            }
        }
        Some(jac)
    }

    fn descriptor(&self) -> FeatureDescriptor {
        FeatureDescriptor::Polynomial { dim: self.dim, order: self.order }
    }
}

/// Radial profile `ϕ(r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum RadialKind {
    /// `exp(−r²/(2η²))`.
    Gaussian { eta: f64 },
    /// `r² ln r`, extended by 0 at `r = 0`.
    ThinPlate,
}

impl RadialKind {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            RadialKind::Gaussian { eta } => (-r * r / (2.0 * eta * eta)).exp(),
            RadialKind::ThinPlate if r == 0.0 => 0.0,
            RadialKind::ThinPlate => r * r * r.ln(),
        }
    }

    /// `ϕ'(r)/r`, so that `∇ₓϕ(‖x − c‖) = (x − c)·ϕ'(r)/r`.
    fn slope_over_r(&self, r: f64) -> f64 {
        match *self {
            RadialKind::Gaussian { eta } => -self.value(r) / (eta * eta),
            RadialKind::ThinPlate if r == 0.0 => 0.0,
            RadialKind::ThinPlate => 2.0 * r.ln() + 1.0,
        }
    }
}

/// One radial basis function per center.
#[derive(Clone, Debug, PartialEq)]
pub struct Rbf {
    centers: Vec<Vec<f64>>,
    radial: RadialKind,
}

impl Rbf {
    pub fn new(centers: Vec<Vec<f64>>, radial: RadialKind) -> Result<Self> {
        let d = centers.first().map(Vec::len).ok_or_else(|| Error::Domain("no RBF centers".into()))?;
        if centers.iter().any(|c| c.len() != d) {
            return Err(Error::Domain("RBF centers must share a dimension".into()));
        }
        if let RadialKind::Gaussian { eta } = radial {
            if !(eta > 0.0) {
                return Err(Error::Domain(format!("RBF width must be positive, got {eta}")));
            }
        }
        Ok(Self { centers, radial })
    }
}

pub fn rbf_features(centers: Vec<Vec<f64>>, radial: RadialKind) -> Result<Arc<dyn FeatureMap>> {
    Ok(Arc::new(Rbf::new(centers, radial)?))
}

impl FeatureMap for Rbf {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn len(&self) -> usize {
        self.centers.len()
    }

    fn evaluate(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.centers.iter().map(|c| self.radial.value(dist(x, c))))
    }

    fn jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let mut jac = DMatrix::zeros(self.len(), d);
        for (k, c) in self.centers.iter().enumerate() {
            let s = self.radial.slope_over_r(dist(x, c));
            for j in 0..d {
                jac[(k, j)] = (x[j] - c[j]) * s;
            }
        }
        Some(jac)
    }

    fn descriptor(&self) -> FeatureDescriptor {
        FeatureDescriptor::Rbf { centers: self.centers.clone(), radial: self.radial }
    }
}

/// A base feature map with a stylized model `ψ` appended as the last feature.
pub struct Augmented {
    base: Arc<dyn FeatureMap>,
    name: String,
    psi: ScalarFn,
}

impl Augmented {
    pub fn new(base: Arc<dyn FeatureMap>, name: &str, psi: ScalarFn) -> Self {
        Self { base, name: name.into(), psi }
    }
}

impl fmt::Debug for Augmented {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Augmented").field("base", &self.base).field("psi", &self.name).finish()
    }
}

pub fn augment_with_stylized(base: Arc<dyn FeatureMap>, name: &str, psi: ScalarFn) -> Arc<dyn FeatureMap> {
    Arc::new(Augmented::new(base, name, psi))
}

impl FeatureMap for Augmented {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn len(&self) -> usize {
        self.base.len() + 1
    }

    fn evaluate(&self, x: &[f64]) -> DVector<f64> {
        let b = self.base.evaluate(x);
        DVector::from_iterator(self.len(), b.iter().copied().chain(std::iter::once((self.psi)(x))))
    }

    /// The `ψ` row is a central difference.
    fn jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let b = self.base.jacobian(x)?;
        let d = self.dim();
        let rows = b.nrows();
        let mut jac = b.insert_row(rows, 0.0);
        let mut xp = x.to_vec();
        for j in 0..d {
            let h = 1e-6 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let fp = (self.psi)(&xp);
            xp[j] = x[j] - h;
            let fm = (self.psi)(&xp);
            xp[j] = x[j];
            jac[(self.base.len(), j)] = (fp - fm) / (2.0 * h);
        }
        Some(jac)
    }

    fn descriptor(&self) -> FeatureDescriptor {
        FeatureDescriptor::Augmented { base: Box::new(self.base.descriptor()), psi: self.name.clone() }
    }
}

/// Rows `φ(xᵢ)ᵀ` stacked into the `n × p` design matrix.
pub fn design_matrix(features: &dyn FeatureMap, points: &[Vec<f64>]) -> DMatrix<f64> {
    let mut phi = DMatrix::zeros(points.len(), features.len());
    for (i, x) in points.iter().enumerate() {
        phi.row_mut(i).tr_copy_from(&features.evaluate(x));
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_polynomial() {
        let p = Polynomial::new(2, 1).unwrap();
        assert_eq!(p.evaluate(&[3.0, 4.0]).as_slice(), &[1.0, 3.0, 4.0]);
    }

    #[test]
    fn quadratic_polynomial() {
        let p = Polynomial::new(2, 2).unwrap();
        assert_eq!(p.evaluate(&[3.0, 4.0]).as_slice(), &[1.0, 3.0, 4.0, 9.0, 12.0, 16.0]);
        assert_eq!(Polynomial::new(1, 2).unwrap().len(), 3);
        assert!(Polynomial::new(2, 3).is_err());
    }

    #[test]
    fn rbf_values() {
        let g = Rbf::new(vec![vec![0.0, 0.0]], RadialKind::Gaussian { eta: 1.0 }).unwrap();
        assert_eq!(g.evaluate(&[0.0, 0.0])[0], 1.0);
        assert!((g.evaluate(&[1.0, 0.0])[0] - 0.6065306597126334).abs() < 1e-15);
        let t = Rbf::new(vec![vec![0.0, 0.0]], RadialKind::ThinPlate).unwrap();
        assert_eq!(t.evaluate(&[0.0, 1.0])[0], 0.0);
        assert_eq!(t.evaluate(&[0.0, 0.0])[0], 0.0);
    }

    #[test]
    fn augmentation_appends_psi() {
        let base = polynomial_features(2, 1).unwrap();
        let aug = augment_with_stylized(base, "sum", Arc::new(|x: &[f64]| x[0] + x[1]));
        assert_eq!(aug.len(), 4);
        assert_eq!(aug.evaluate(&[1.0, 2.0])[3], 3.0);
    }

    fn check_jacobian(map: &dyn FeatureMap, x: &[f64]) -> std::result::Result<(), TestCaseError> {
        let jac = map.jacobian(x).unwrap();
        for j in 0..map.dim() {
            let h = 1e-6;
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (map.evaluate(&xp) - map.evaluate(&xm)) / (2.0 * h);
            for k in 0..map.len() {
                let scale = jac[(k, j)].abs().max(1.0);
                prop_assert!((fd[k] - jac[(k, j)]).abs() <= 1e-5 * scale, "k={} j={} fd={} an={}", k, j, fd[k], jac[(k, j)]);
            }
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn jacobians_match_differences(x in prop::collection::vec(-2.0f64..2.0, 3)) {
            let centers = vec![vec![0.5, -0.3, 1.0], vec![-1.0, 0.2, 0.0]];
            check_jacobian(&Polynomial::new(3, 2).unwrap(), &x)?;
            check_jacobian(&Rbf::new(centers.clone(), RadialKind::Gaussian { eta: 0.8 }).unwrap(), &x)?;
            check_jacobian(&Rbf::new(centers, RadialKind::ThinPlate).unwrap(), &x)?;
            let aug = Augmented::new(polynomial_features(3, 1).unwrap(), "s", Arc::new(|x: &[f64]| (x[0] * x[1]).sin() + x[2] * x[2]));
            check_jacobian(&aug, &x)?;
        }
    }
}
