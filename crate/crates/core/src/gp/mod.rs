//! Gaussian-process surrogates.
//!
//! Covariance and mean function families, the exact posterior with a cached
//! Cholesky factor, marginal-likelihood hyperparameter selection and the
//! rank-one updating scheme used by the knowledge gradient.

mod bfgs;
mod hyper;
mod kernels;
mod mean;
mod posterior;
mod update;

pub(crate) use bfgs::maximize_in_box;
pub use hyper::{
    fit_hyperparameters, fit_hyperparameters_from, log_marginal_likelihood, prior_log_likelihood, HyperBounds,
    HyperFit, Hyperparameters, KernelFamily, MeanSpec, PriorFamily,
};
pub use kernels::{
    kernel_gaussian, kernel_gibf, kernel_matern, matern_limit_check, CovarianceFunction, KernelDescriptor, MaternGap,
    MaternNu,
};
pub use mean::{GpPrior, MeanFunction};
pub use posterior::{clamp_variance, posterior, GpPosterior, Posterior, VARIANCE_TOLERANCE};
pub use update::{kg_update, UpdatedPosterior};
