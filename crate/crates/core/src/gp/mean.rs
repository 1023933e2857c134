use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use super::CovarianceFunction;
use crate::surrogates::{FeatureMap, ScalarFn};

/// Prior mean `μ(x)`.
#[derive(Clone)]
pub enum MeanFunction {
    Constant(f64),
    /// `βᵀφ(x)`.
    Basis { beta: DVector<f64>, features: Arc<dyn FeatureMap> },
    /// `scale · ψ(x)` for a stylized model `ψ`.
    Stylized { psi: ScalarFn, scale: f64 },
}

impl MeanFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Basis { beta, features } => beta.dot(&features.evaluate(x)),
            Self::Stylized { psi, scale } => scale * psi(x),
        }
    }
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Self::Basis { beta, features } => {
                f.debug_struct("Basis").field("beta", beta).field("features", features).finish()
            }
            Self::Stylized { scale, .. } => f.debug_struct("Stylized").field("scale", scale).finish_non_exhaustive(),
        }
    }
}

/// `f ~ GP(μ, K)`.
#[derive(Clone, Debug)]
pub struct GpPrior {
    pub mean: MeanFunction,
    pub cov: CovarianceFunction,
}

impl GpPrior {
    pub fn new(mean: MeanFunction, cov: CovarianceFunction) -> Self {
        Self { mean, cov }
    }

    pub fn zero_mean(cov: CovarianceFunction) -> Self {
        Self { mean: MeanFunction::Constant(0.0), cov }
    }
}
