//! Linear basis function surrogates `f̂(x) = βᵀφ(x)`.
//!
//! Feature maps cover polynomials, radial basis functions and augmentation
//! with a stylized model. Coefficients are fitted by ordinary least squares,
//! ridge regression, or generalized least squares over values and gradient
//! estimates. The kernel ridge predictor lives here too: with an
//! inner-product kernel it reproduces the ridge predictor.

mod features;
mod fit;
mod persist;

pub use features::{
    augment_with_stylized, design_matrix, polynomial_features, rbf_features, Augmented, FeatureDescriptor,
    FeatureMap, Polynomial, RadialKind, Rbf, ScalarFn,
};
pub use fit::{
    fit_gls_with_gradients, fit_ols, fit_ols_with_gradients, fit_rls, krr_predict, FitKind, KrrPredictor,
    LinearSurrogate, NoiseCovariance,
};
