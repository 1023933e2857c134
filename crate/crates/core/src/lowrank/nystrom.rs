use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::CovarianceFunction;
use crate::linalg::SpdFactor;

/// Indices (0-based) of the design points anchoring a Nyström approximation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Domain(format!("active set index {i} is out of range or repeated")));
            }
        }
        Ok(Self { indices })
    }

    pub fn full(n: usize) -> Self {
        Self { indices: (0..n).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform sample of `m` of `n` indices without replacement.
pub fn select_active_set<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<ActiveSet> {
    if m == 0 || m > n {
        return Err(Error::Domain(format!("active set size must be in 1..={n}, got {m}")));
    }
    Ok(ActiveSet { indices: rand::seq::index::sample(rng, n, m).into_vec() })
}

/// The induced kernel `K̃(x, x') = k_m(x)ᵀK_{m,m}⁻¹k_m(x')`.
#[derive(Clone, Debug)]
pub struct NystromInduced {
    base: CovarianceFunction,
    anchors: Vec<Vec<f64>>,
    kmm: SpdFactor,
}

impl NystromInduced {
    pub fn new(base: CovarianceFunction, anchors: Vec<Vec<f64>>) -> Result<Self> {
        let kmm = SpdFactor::new(base.gram(&anchors))?;
        Ok(Self { base, anchors, kmm })
    }

    pub fn base(&self) -> &CovarianceFunction {
        &self.base
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    /// `L⁻¹k_m(x)` with `K_{m,m} = LLᵀ`.
    pub fn whitened(&self, x: &[f64]) -> DVector<f64> {
        self.kmm.half_solve(&self.base.cross(&self.anchors, x))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.whitened(x).dot(&self.whitened(y))
    }
}
