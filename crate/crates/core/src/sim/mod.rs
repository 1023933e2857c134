//! Simulation models, replication and aggregation.
//!
//! A [`SimulationModel`] produces noisy outputs `y = f(x) + ε` at a design
//! point. [`run_replications`] draws `r` of them, each from its own random
//! stream, and [`aggregate`] reduces the replications to an
//! [`AggregatedObservation`] holding the sample mean and the estimated
//! variance of that mean.

mod io;
pub mod queue;
mod rng;
pub mod testbed;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub use io::{fmt_f64, read_dataset, write_dataset};
pub use queue::{stylized_queue_mean_los, Station, TandemQueue};
pub use rng::{ReplicationStreams, SimRng};
pub use testbed::{testbed_catalog, testbed_model, Bump, GroundTruth, Multimodal, Noise, Quadratic, TESTBED_IDS};

/// A point in the design space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint(Vec<f64>);

impl DesignPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinates {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DesignPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<&[f64]> for DesignPoint {
    fn from(x: &[f64]) -> Self {
        Self(x.to_vec())
    }
}

/// Axis-aligned feasible box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Domain("box bounds must be finite with lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        Self { lower: vec![lo; d], upper: vec![hi; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn diagonal(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Map a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }
}

/// A stochastic simulation model `F(x)` with mean response `f(x) = E[F(x)]`.
///
/// Implementations are immutable and may be evaluated concurrently; all
/// randomness comes from the stream passed in.
pub trait SimulationModel: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn bounds(&self) -> &Bounds;

    fn evaluate(&self, x: &[f64], rng: &mut SimRng) -> Result<f64>;

    fn supports_gradient(&self) -> bool {
        false
    }

    /// Output together with a direct gradient estimate.
    fn evaluate_with_gradient(&self, _x: &[f64], _rng: &mut SimRng) -> Result<(f64, Vec<f64>)> {
        Err(Error::Capability(format!("model '{}' has no gradient estimator", self.name())))
    }

    /// Closed-form stylized approximation ψ(x), if the model has one.
    fn stylized(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// True mean response, for models built with known ground truth.
    fn true_mean(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn ground_truth(&self) -> Option<GroundTruth> {
        None
    }
}

/// Raw outputs of `r` replications at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSet {
    pub point: DesignPoint,
    pub outputs: Vec<f64>,
    pub gradients: Option<Vec<Vec<f64>>>,
}

impl ReplicationSet {
    pub fn new(point: DesignPoint, outputs: Vec<f64>, gradients: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::Domain("a replication set needs at least one output".into()));
        }
        if let Some(g) = &gradients {
            if g.len() != outputs.len() {
                return Err(Error::Dimension { expected: outputs.len(), got: g.len() });
            }
            if let Some(bad) = g.iter().find(|gi| gi.len() != point.dim()) {
                return Err(Error::Dimension { expected: point.dim(), got: bad.len() });
            }
        }
        Ok(Self { point, outputs, gradients })
    }

    pub fn reps(&self) -> usize {
        self.outputs.len()
    }

    /// Append the replications of `other`, which must be at the same point.
    pub fn merge(&mut self, other: ReplicationSet) {
        debug_assert_eq!(self.point, other.point);
        self.outputs.extend(other.outputs);
        match (&mut self.gradients, other.gradients) {
            (Some(a), Some(b)) => a.extend(b),
            _ => self.gradients = None,
        }
    }
}

/// Sample mean `ȳ`, replication count `r` and `Var[ȳ]` estimate at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedObservation {
    pub point: DesignPoint,
    pub mean: f64,
    pub reps: usize,
    /// Estimate of `σ²(x)/r`; `None` when it could not be estimated (`r = 1`).
    pub noise_var: Option<f64>,
    pub grad_mean: Option<Vec<f64>>,
}

impl AggregatedObservation {
    /// Observation with a known noise variance of the mean.
    pub fn new(point: Vec<f64>, mean: f64, reps: usize, noise_var: f64) -> Self {
        Self { point: DesignPoint(point), mean, reps, noise_var: Some(noise_var), grad_mean: None }
    }
}

/// Run `r` replications of `model` at `point`, one random stream each.
pub fn run_replications(
    model: &dyn SimulationModel,
    point: &DesignPoint,
    r: usize,
    streams: &mut ReplicationStreams,
) -> Result<ReplicationSet> {
    if r == 0 {
        return Err(Error::Domain("replication count must be at least 1".into()));
    }
    if point.dim() != model.dimension() {
        return Err(Error::Dimension { expected: model.dimension(), got: point.dim() });
    }
    if !model.bounds().contains(point) {
        return Err(Error::Infeasible { point: point.to_vec() });
    }
    let mut outputs = Vec::with_capacity(r);
    if model.supports_gradient() {
        let mut gradients = Vec::with_capacity(r);
        for _ in 0..r {
            let mut rng = streams.next_stream();
            let (y, g) = model.evaluate_with_gradient(point, &mut rng)?;
            outputs.push(y);
            gradients.push(g);
        }
        ReplicationSet::new(point.clone(), outputs, Some(gradients))
    } else {
        for _ in 0..r {
            let mut rng = streams.next_stream();
            outputs.push(model.evaluate(point, &mut rng)?);
        }
        ReplicationSet::new(point.clone(), outputs, None)
    }
}

/// Reduce replications to their sample mean and the estimated variance of it.
pub fn aggregate(reps: &ReplicationSet) -> Result<AggregatedObservation> {
    if reps.outputs.is_empty() {
        return Err(Error::Domain("cannot aggregate an empty replication set".into()));
    }
    let r = reps.outputs.len();
    let mean = stats::mean(&reps.outputs);
    let noise_var = stats::sample_variance(&reps.outputs).map(|v| v / r as f64);
    let grad_mean = reps.gradients.as_ref().map(|gs| {
        let d = reps.point.dim();
        (0..d).map(|j| gs.iter().map(|g| g[j]).sum::<f64>() / r as f64).collect()
    });
    Ok(AggregatedObservation { point: reps.point.clone(), mean, reps: r, noise_var, grad_mean })
}

/// Aggregated simulation data `{(xᵢ, ȳᵢ)}` of a common dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dimension: usize,
    pub observations: Vec<AggregatedObservation>,
}

impl Dataset {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, observations: Vec::new() }
    }

    pub fn from_observations(dimension: usize, observations: Vec<AggregatedObservation>) -> Result<Self> {
        let mut ds = Self::new(dimension);
        for obs in observations {
            ds.push(obs)?;
        }
        Ok(ds)
    }

    /// Convenience constructor with a common known noise variance.
    pub fn from_points(points: &[Vec<f64>], means: &[f64], noise_var: f64) -> Result<Self> {
        let d = points.first().map_or(0, |p| p.len());
        let obs = points
            .iter()
            .zip(means)
            .map(|(p, &m)| AggregatedObservation::new(p.clone(), m, 1, noise_var))
            .collect();
        Self::from_observations(d, obs)
    }

    pub fn push(&mut self, obs: AggregatedObservation) -> Result<()> {
        if obs.point.dim() != self.dimension {
            return Err(Error::Dimension { expected: self.dimension, got: obs.point.dim() });
        }
        if obs.reps == 0 {
            return Err(Error::Domain("observation with zero replications".into()));
        }
        if obs.noise_var.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::Domain("noise variance must be nonnegative".into()));
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.point.to_vec()).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.mean).collect()
    }

    /// Diagonal of Σ, failing on any observation with unknown noise.
    pub fn noise_diag(&self) -> Result<Vec<f64>> {
        self.observations
            .iter()
            .enumerate()
            .map(|(index, o)| o.noise_var.ok_or(Error::UnknownNoise { index }))
            .collect()
    }

    /// Fill unknown noise variances from a floor on σ², as `floor / r`.
    pub fn with_noise_floor(mut self, sigma2_floor: f64) -> Self {
        for o in &mut self.observations {
            if o.noise_var.is_none() {
                o.noise_var = Some(sigma2_floor / o.reps as f64);
            }
        }
        self
    }

    /// Same data with every noise variance replaced by `v`.
    pub fn with_noise(mut self, v: f64) -> Self {
        for o in &mut self.observations {
            o.noise_var = Some(v);
        }
        self
    }
}
