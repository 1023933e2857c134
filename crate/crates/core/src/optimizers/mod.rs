//! Simulation-optimization algorithms.
//!
//! Local methods (response surface methodology, the STRONG trust-region
//! method, SPAS with shrinking-ball estimates) and global GP-based methods
//! driven by the knowledge gradient, GP-UCB or GPS sampling inside a common
//! sequential template.

mod acquisition;
mod design;
mod gps;
mod local;
mod rsm;
mod spas;
mod strong;
mod template;
mod trace;

pub use acquisition::{
    expected_max_affine, expected_max_increment, kg_score_discrete, kg_score_saa, ucb_score, KgContext, UcbSchedule,
};
pub use design::{central_composite, fractional_factorial, full_factorial, latin_hypercube, latin_hypercube_in, scale_design};
pub use gps::{
    gps_build_model, gps_density, gps_sample, gps_weights, normalize_weights, smooth_sample, GpsModel, GpsSampler,
    WeightFamily,
};
pub use template::{sequential_template, Acquisition, TemplateConfig};
pub use trace::{Budget, Evaluator, OptimizationTrace, TraceRecord};
pub use local::{improvement_test, trust_region_step, LocalModel};
pub use strong::{strong_run, strong_step, strong_transition, StepRecord, StrongConfig, Transition, TrustRegionState};
pub use rsm::{rsm_run, RsmConfig, RsmReport, StationaryKind};
pub use spas::{shrinking_ball_estimate, spas_run, SpasConfig, SpasIteration, SpasReport};
