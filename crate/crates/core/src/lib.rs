//! Surrogate-based simulation optimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`] runs replications of stochastic simulation models and aggregates
//!   them into the `(x, ȳ, r, σ²/r)` form every surrogate consumes. It also
//!   ships a small testbed with constructed ground truth and a blocking
//!   tandem-queue simulation.
//! * [`surrogates`] fits linear basis function models (OLS, ridge, GLS with
//!   gradient observations) and the kernel ridge predictor.
//! * [`gp`] holds covariance functions, the Gaussian-process posterior,
//!   marginal-likelihood fitting and the one-step updating scheme.
//! * [`lowrank`] approximates the posterior for large designs with the
//!   Nyström method and random Fourier features.
//! * [`optimizers`] implements the local (RSM, STRONG, SPAS) and global
//!   (knowledge gradient, GP-UCB, GP-based search) algorithms.

pub mod error;
pub mod gp;
pub mod linalg;
pub mod lowrank;
pub mod optimizers;
pub mod sim;
pub mod stats;
pub mod surrogates;

pub use error::{Error, Result};
