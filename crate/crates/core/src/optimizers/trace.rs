//! Budget accounting and run traces.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{run_replications, DesignPoint, ReplicationSet, ReplicationStreams, SimulationModel};

/// Replication budget. `consumed` never exceeds `max_evaluations`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    max_evaluations: u64,
    consumed: u64,
}

impl Budget {
    pub fn new(max_evaluations: u64) -> Result<Self> {
        if max_evaluations == 0 {
            return Err(Error::Domain("budget must be positive".into()));
        }
        Ok(Self { max_evaluations, consumed: 0 })
    }

    pub fn max_evaluations(&self) -> u64 {
        self.max_evaluations
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn remaining(&self) -> u64 {
        self.max_evaluations - self.consumed
    }

    /// Reserve `r` replications, or fail without consuming anything.
    pub fn consume(&mut self, r: u64) -> Result<()> {
        if r > self.remaining() {
            return Err(Error::Budget { requested: r, remaining: self.remaining() });
        }
        self.consumed += r;
        Ok(())
    }
}

/// One simulated point: which iteration asked for it and the incumbent at
/// that time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub x: Vec<f64>,
    pub reps: usize,
    pub incumbent: Vec<f64>,
    /// Unset until the method has an incumbent estimate.
    pub incumbent_est: Option<f64>,
    /// Unset for design points not chosen by a criterion.
    pub criterion: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub algorithm: String,
    pub model: String,
    pub dimension: usize,
    pub records: Vec<TraceRecord>,
    pub recommendation: Vec<f64>,
    pub recommendation_estimate: f64,
    pub consumed: u64,
    pub max_evaluations: u64,
    /// The budget ran out in the middle of a stage.
    pub truncated: bool,
    /// The method stopped on its own convergence rule.
    pub converged: bool,
}

impl OptimizationTrace {
    /// Replications summed over the records; equals `consumed`.
    pub fn replications_recorded(&self) -> u64 {
        self.records.iter().map(|r| r.reps as u64).sum()
    }

    /// Copy with wall times zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        t.records.iter_mut().for_each(|r| r.elapsed_ms = 0.0);
        t
    }

    /// Incumbent recorded with the last record whose cumulative consumption
    /// is at most `evaluations`.
    pub fn incumbent_after(&self, evaluations: u64) -> Option<&[f64]> {
        let mut used = 0;
        let mut inc = None;
        for r in &self.records {
            used += r.reps as u64;
            if used > evaluations {
                break;
            }
            inc = Some(r.incumbent.as_slice());
        }
        inc
    }

    pub fn csv_header(d: usize) -> String {
        let mut cols = vec!["iter".to_string()];
        cols.extend((1..=d).map(|j| format!("x_{j}")));
        cols.push("reps".into());
        cols.extend((1..=d).map(|j| format!("incumbent_{j}")));
        cols.extend(["incumbent_est".into(), "criterion".into(), "elapsed_ms".into()]);
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let f = crate::sim::fmt_f64;
        let mut out = Self::csv_header(self.dimension);
        out.push('\n');
        for r in &self.records {
            let mut cols = vec![r.iter.to_string()];
            cols.extend(r.x.iter().map(|v| f(*v)));
            cols.push(r.reps.to_string());
            cols.extend(r.incumbent.iter().map(|v| f(*v)));
            let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
            cols.extend([opt(r.incumbent_est), opt(r.criterion), format!("{:.3}", r.elapsed_ms)]);
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs replications against a budget and records every call.
pub struct Evaluator<'a> {
    model: &'a dyn SimulationModel,
    streams: ReplicationStreams,
    budget: Budget,
    start: Instant,
    records: Vec<TraceRecord>,
    iter: usize,
    incumbent: Vec<f64>,
    incumbent_est: Option<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a dyn SimulationModel, budget: Budget, seed: u64) -> Self {
        Self {
            model,
            streams: ReplicationStreams::new(seed),
            budget,
            start: Instant::now(),
            records: Vec::new(),
            iter: 0,
            incumbent: model.bounds().center(),
            incumbent_est: None,
        }
    }

    pub fn model(&self) -> &'a dyn SimulationModel {
        self.model
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget.remaining()
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn next_iteration(&mut self) {
        self.iter += 1;
    }

    pub fn set_incumbent(&mut self, x: &[f64], estimate: f64) {
        self.incumbent = x.to_vec();
        self.incumbent_est = Some(estimate);
    }

    /// `r` replications at `x`, tagged with `criterion`.
    pub fn simulate(&mut self, x: &[f64], r: usize, criterion: Option<f64>) -> Result<ReplicationSet> {
        let point = DesignPoint::new(x.to_vec())?;
        if point.dim() != self.model.dimension() {
            return Err(Error::Dimension { expected: self.model.dimension(), got: point.dim() });
        }
        if !self.model.bounds().contains(&point) {
            return Err(Error::Infeasible { point: x.to_vec() });
        }
        self.budget.consume(r as u64)?;
        let set = run_replications(self.model, &point, r, &mut self.streams)?;
        self.records.push(TraceRecord {
            iter: self.iter,
            x: x.to_vec(),
            reps: r,
            incumbent: self.incumbent.clone(),
            incumbent_est: self.incumbent_est,
            criterion,
            elapsed_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(set)
    }

    pub fn finish(self, algorithm: &str, recommendation: Vec<f64>, estimate: f64, truncated: bool, converged: bool) -> OptimizationTrace {
        OptimizationTrace {
            algorithm: algorithm.into(),
            model: self.model.name().into(),
            dimension: self.model.dimension(),
            records: self.records,
            recommendation,
            recommendation_estimate: estimate,
            consumed: self.budget.consumed(),
            max_evaluations: self.budget.max_evaluations(),
            truncated,
            converged,
        }
    }
}
