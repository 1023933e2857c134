//! Marginal-likelihood selection of prior hyperparameters.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bfgs::maximize_in_box;
use super::{CovarianceFunction, GpPrior, MaternNu, MeanFunction};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::optimizers::latin_hypercube;
use crate::sim::Dataset;

/// Covariance family whose parameters are fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Matern { nu: MaternNu },
    Gibf { orders: Vec<u8> },
}

/// How the prior mean is chosen.
#[derive(Clone, Debug)]
pub enum MeanSpec {
    Fixed(MeanFunction),
    /// A constant `c` fitted with the kernel parameters.
    FittedConstant,
}

/// A parametric prior family `θ ↦ GP(μ_θ, K_θ)`.
#[derive(Clone, Debug)]
pub struct PriorFamily {
    pub kernel: KernelFamily,
    pub mean: MeanSpec,
}

/// Hyperparameter vector with named slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl Hyperparameters {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Box bounds on the hyperparameters, in natural units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PriorFamily {
    pub fn new(kernel: KernelFamily, mean: MeanSpec) -> Self {
        Self { kernel, mean }
    }

    pub fn slot_names(&self) -> Vec<String> {
        let mut names: Vec<String> = match &self.kernel {
            KernelFamily::Gaussian | KernelFamily::Matern { .. } => vec!["tau".into(), "eta".into()],
            KernelFamily::Gibf { orders } => orders
                .iter()
                .enumerate()
                .flat_map(|(j, m)| (0..*m as usize + 2).map(move |l| format!("theta_{}_{l}", j + 1)))
                .collect(),
        };
        if matches!(self.mean, MeanSpec::FittedConstant) {
            names.push("c".into());
        }
        names
    }

    /// Kernel slots are positive and searched in log space; the mean
    /// constant is searched linearly.
    fn is_log_slot(&self, i: usize) -> bool {
        !(matches!(self.mean, MeanSpec::FittedConstant) && i + 1 == self.slot_names().len())
    }

    pub fn hyperparameters(&self, values: Vec<f64>) -> Result<Hyperparameters> {
        let names = self.slot_names();
        if names.len() != values.len() {
            return Err(Error::Dimension { expected: names.len(), got: values.len() });
        }
        Ok(Hyperparameters { names, values })
    }

    pub fn build(&self, theta: &Hyperparameters) -> Result<GpPrior> {
        let v = &theta.values;
        if v.len() != self.slot_names().len() {
            return Err(Error::Dimension { expected: self.slot_names().len(), got: v.len() });
        }
        let cov = match &self.kernel {
            KernelFamily::Gaussian => CovarianceFunction::gaussian(v[0], v[1])?,
            KernelFamily::Matern { nu } => CovarianceFunction::matern(v[0], v[1], nu.value())?,
            KernelFamily::Gibf { orders } => {
                let mut it = v.iter().copied();
                let theta = orders.iter().map(|m| it.by_ref().take(*m as usize + 2).collect()).collect();
                CovarianceFunction::gibf(orders.clone(), theta)?
            }
        };
        let mean = match &self.mean {
            MeanSpec::Fixed(m) => m.clone(),
            MeanSpec::FittedConstant => MeanFunction::Constant(*v.last().expect("c slot")),
        };
        Ok(GpPrior::new(mean, cov))
    }

    /// Bounds scaled to the data: `τ ∈ [0.05, 20]·s_y`, `η ∈ [0.02, 2]·w`
    /// with `w` the widest box side, `c` within the range of the means.
    /// GIBF weights span six decades around one.
    pub fn default_bounds(&self, data: &Dataset, widths: &[f64]) -> HyperBounds {
        let ys = data.means();
        let sy = crate::stats::sample_variance(&ys).map_or(1.0, f64::sqrt).max(1e-6);
        let w = widths.iter().copied().fold(0.0, f64::max).max(1e-6);
        let mut lower = vec![];
        let mut upper = vec![];
        match &self.kernel {
            KernelFamily::Gaussian | KernelFamily::Matern { .. } => {
                lower.extend([0.05 * sy, 0.02 * w]);
                upper.extend([20.0 * sy, 2.0 * w]);
            }
            KernelFamily::Gibf { orders } => {
                let k: usize = orders.iter().map(|m| *m as usize + 2).sum();
                lower.extend(std::iter::repeat_n(1e-3, k));
                upper.extend(std::iter::repeat_n(1e3, k));
            }
        }
        if matches!(self.mean, MeanSpec::FittedConstant) {
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lower.push(if lo.is_finite() { lo } else { 0.0 });
            upper.push(if hi.is_finite() { hi } else { 0.0 });
        }
        HyperBounds { lower, upper }
    }

    fn to_search(&self, values: &[f64]) -> Vec<f64> {
        values.iter().enumerate().map(|(i, v)| if self.is_log_slot(i) { v.ln() } else { *v }).collect()
    }

    fn from_search(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(i, v)| if self.is_log_slot(i) { v.exp() } else { *v }).collect()
    }
}

/// `log p(ȳ | θ)` for `ȳ ~ N(μ_θ, K_θ + Σ)`.
pub fn log_marginal_likelihood(family: &PriorFamily, theta: &Hyperparameters, data: &Dataset) -> Result<f64> {
    let prior = family.build(theta)?;
    prior_log_likelihood(&prior, data)
}

/// Log density of the data means under a fixed prior.
pub fn prior_log_likelihood(prior: &GpPrior, data: &Dataset) -> Result<f64> {
    let noise = data.noise_diag()?;
    let points = data.points();
    let mut k = prior.cov.gram(&points);
    for (i, s) in noise.iter().enumerate() {
        k[(i, i)] += s;
    }
    let factor = SpdFactor::new(k)?;
    let r = DVector::from_iterator(points.len(), data.observations.iter().map(|o| o.mean - prior.mean.eval(&o.point)));
    let half = factor.half_solve(&r);
    let n = points.len() as f64;
    Ok(-0.5 * half.norm_squared() - 0.5 * factor.ln_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Result of a multi-start likelihood search.
#[derive(Clone, Debug)]
pub struct HyperFit {
    pub best: Hyperparameters,
    pub log_likelihood: f64,
    /// Likelihood at each start point, in start order.
    pub start_values: Vec<f64>,
    /// Likelihood reached from each start point.
    pub local_values: Vec<f64>,
}

const MAX_ITER: usize = 200;

/// Multi-start ascent from `restarts` Latin-hypercube points over the
/// (log-scaled) bounds.
pub fn fit_hyperparameters<R: Rng + ?Sized>(
    family: &PriorFamily,
    data: &Dataset,
    bounds: &HyperBounds,
    restarts: usize,
    rng: &mut R,
) -> Result<HyperFit> {
    let (lo, hi) = search_box(family, bounds)?;
    let starts: Vec<Vec<f64>> = latin_hypercube(restarts.max(1), lo.len(), rng)
        .into_iter()
        .map(|u| family.from_search(&u.iter().enumerate().map(|(i, t)| lo[i] + t * (hi[i] - lo[i])).collect::<Vec<_>>()))
        .collect();
    fit_hyperparameters_from(family, data, bounds, &starts)
}

/// Multi-start ascent from explicit start points (natural units).
pub fn fit_hyperparameters_from(
    family: &PriorFamily,
    data: &Dataset,
    bounds: &HyperBounds,
    starts: &[Vec<f64>],
) -> Result<HyperFit> {
    let (lo, hi) = search_box(family, bounds)?;
    data.noise_diag()?;
    let objective = |u: &[f64]| -> f64 {
        family
            .hyperparameters(family.from_search(u))
            .and_then(|th| log_marginal_likelihood(family, &th, data))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_values = Vec::with_capacity(starts.len());
    let mut local_values = Vec::with_capacity(starts.len());
    for s in starts {
        let u0: Vec<f64> = family.to_search(s).iter().enumerate().map(|(i, v)| v.clamp(lo[i], hi[i])).collect();
        start_values.push(objective(&u0));
        let (u, fu) = maximize_in_box(&objective, &lo, &hi, &u0, MAX_ITER);
        local_values.push(fu);
        if fu.is_finite() && best.as_ref().is_none_or(|(_, fb)| fu > *fb) {
            best = Some((u, fu));
        }
    }
    let (u, fu) = best.ok_or_else(|| Error::Fitting("every start point failed to factorize".into()))?;
    Ok(HyperFit {
        best: family.hyperparameters(family.from_search(&u))?,
        log_likelihood: fu,
        start_values,
        local_values,
    })
}

fn search_box(family: &PriorFamily, bounds: &HyperBounds) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = family.slot_names().len();
    if bounds.lower.len() != k || bounds.upper.len() != k {
        return Err(Error::Dimension { expected: k, got: bounds.lower.len() });
    }
    for i in 0..k {
        let (l, u) = (bounds.lower[i], bounds.upper[i]);
        if !(l <= u) || !l.is_finite() || !u.is_finite() || (family.is_log_slot(i) && l <= 0.0) {
            return Err(Error::Domain(format!("invalid bounds [{l}, {u}] for slot {i}")));
        }
    }
    Ok((family.to_search(&bounds.lower), family.to_search(&bounds.upper)))
}
