//! Experiment harness for `surropt`.
//!
//! An experiment is a TOML document naming a testbed model, a list of
//! algorithms with their settings, a replication budget and a list of
//! seeds. [`experiment::run_experiment`] runs every (algorithm, seed) cell
//! in parallel and writes a directory keyed by the hash of the canonical
//! spec. [`approx`] tabulates low-rank posterior errors against the exact
//! posterior and [`battery`] holds the numerical identity checks run by
//! `surropt selfcheck`.

pub mod approx;
pub mod battery;
pub mod error;
pub mod experiment;
pub mod registry;
pub mod spec;

pub use error::{BenchError, Result};
