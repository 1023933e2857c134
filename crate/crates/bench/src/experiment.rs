//! Runs every (algorithm, seed) cell of a spec and writes the result
//! directory: `spec.toml`, `traces/seed-<seed>-<algorithm>.csv` and
//! `summary.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use surropt::optimizers::OptimizationTrace;
use surropt::sim::{fmt_f64, SimulationModel};

use crate::error::{BenchError, Result};
use crate::registry::{resolve_model, Algorithm};
use crate::spec::ExperimentSpec;

#[derive(Clone, Debug)]
pub struct CellSummary {
    pub trace: OptimizationTrace,
    /// True mean at the recommendation, when the model knows it.
    pub true_value: Option<f64>,
    pub gap: Option<f64>,
    /// Replications spent when the incumbent first came within the gap
    /// threshold.
    pub budget_to_threshold: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub algorithm: String,
    pub seed: u64,
    pub outcome: std::result::Result<CellSummary, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub runs: usize,
    pub failures: usize,
    pub truncated: usize,
    pub gap_mean: Option<f64>,
    pub gap_std: Option<f64>,
    pub budget_to_threshold_mean: Option<f64>,
    /// Runs that never reached the threshold.
    pub threshold_misses: usize,
}

#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub spec_hash: String,
    pub directory: PathBuf,
    pub cells: Vec<CellResult>,
    pub summary: Vec<AlgorithmSummary>,
}

impl ResultBundle {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

fn gap_of(model: &dyn SimulationModel, x: &[f64]) -> Option<f64> {
    let max = model.ground_truth()?.max;
    Some(max - model.true_mean(x)?)
}

fn budget_to_threshold(model: &dyn SimulationModel, trace: &OptimizationTrace, threshold: f64) -> Option<u64> {
    let mut spent = 0;
    for r in &trace.records {
        spent += r.reps as u64;
        if !r.incumbent.is_empty() && gap_of(model, &r.incumbent).is_some_and(|g| g <= threshold) {
            return Some(spent);
        }
    }
    None
}

fn summarize(model: &dyn SimulationModel, trace: OptimizationTrace, threshold: f64) -> CellSummary {
    let true_value = model.true_mean(&trace.recommendation);
    let gap = gap_of(model, &trace.recommendation);
    let budget_to_threshold = budget_to_threshold(model, &trace, threshold);
    CellSummary { trace, true_value, gap, budget_to_threshold }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let s = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt());
    (Some(m), s)
}

pub fn aggregate(spec: &ExperimentSpec, cells: &[CellResult]) -> Vec<AlgorithmSummary> {
    spec.algorithms
        .iter()
        .map(|a| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.algorithm == a.id).collect();
            let ok: Vec<&CellSummary> = mine.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            let gaps: Vec<f64> = ok.iter().filter_map(|c| c.gap).collect();
            let (gap_mean, gap_std) = mean_std(&gaps);
            let hits: Vec<f64> = ok.iter().filter_map(|c| c.budget_to_threshold.map(|b| b as f64)).collect();
            let has_truth = ok.iter().any(|c| c.gap.is_some());
            AlgorithmSummary {
                algorithm: a.id.clone(),
                runs: mine.len(),
                failures: mine.len() - ok.len(),
                truncated: ok.iter().filter(|c| c.trace.truncated).count(),
                gap_mean,
                gap_std,
                budget_to_threshold_mean: mean_std(&hits).0,
                threshold_misses: if has_truth { ok.len() - hits.len() } else { 0 },
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Per-run rows followed by one `all` row per algorithm.
pub fn summary_csv(spec: &ExperimentSpec, cells: &[CellResult], dim: usize) -> String {
    let mut out = String::from(
        "algorithm,seed,status,consumed,max_evaluations,truncated,converged,estimate,true_value,gap,gap_std,budget_to_threshold",
    );
    for j in 1..=dim {
        out.push_str(&format!(",x_{j}"));
    }
    out.push('\n');
    for c in cells {
        match &c.outcome {
            Ok(s) => {
                let t = &s.trace;
                out.push_str(&format!(
                    "{},{},ok,{},{},{},{},{},{},{},,{}",
                    c.algorithm,
                    c.seed,
                    t.consumed,
                    t.max_evaluations,
                    t.truncated,
                    t.converged,
                    fmt_f64(t.recommendation_estimate),
                    opt(s.true_value),
                    opt(s.gap),
                    s.budget_to_threshold.map(|b| b.to_string()).unwrap_or_default(),
                ));
                for v in &t.recommendation {
                    out.push_str(&format!(",{}", fmt_f64(*v)));
                }
            }
            Err(_) => {
                out.push_str(&format!("{},{},error,,{},,,,,,,", c.algorithm, c.seed, spec.budget));
                out.push_str(&",".repeat(dim));
            }
        }
        out.push('\n');
    }
    for s in aggregate(spec, cells) {
        out.push_str(&format!(
            "{},all,{}/{} ok,,{},{},,,,{},{},{}",
            s.algorithm,
            s.runs - s.failures,
            s.runs,
            spec.budget,
            s.truncated,
            opt(s.gap_mean),
            opt(s.gap_std),
            opt(s.budget_to_threshold_mean),
        ));
        out.push_str(&",".repeat(dim));
        out.push('\n');
    }
    out
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| BenchError::io(path, e))
}

/// Run all cells on `workers` threads and write the result directory under
/// `spec.output_dir/<first 16 hex digits of the spec hash>`.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ResultBundle> {
    spec.validate()?;
    let hash = spec.hash();
    let dir = spec.output_dir.join(&hash[..16]);
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(|e| BenchError::io(&traces, e))?;
    write(&dir.join("spec.toml"), &spec.canonical())?;

    let algorithms: Vec<Algorithm> = spec
        .algorithms
        .iter()
        .enumerate()
        .map(|(i, a)| Algorithm::from_spec(a, spec.prior.as_ref(), &format!("algorithms.{i}")))
        .collect::<Result<_>>()?;
    let dim = resolve_model(&spec.model)?.dimension();
    let jobs: Vec<(usize, u64)> =
        (0..algorithms.len()).flat_map(|a| spec.seeds.iter().map(move |&s| (a, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::config("workers", e))?;
    let cells: Vec<CellResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, seed)| {
                let id = spec.algorithms[a].id.clone();
                let outcome = resolve_model(&spec.model)
                    .map_err(|e| e.to_string())
                    .and_then(|model| {
                        let trace = algorithms[a].run(model.as_ref(), spec.budget, seed).map_err(|e| e.to_string())?;
                        let path = traces.join(format!("seed-{seed}-{id}.csv"));
                        write(&path, &trace.to_csv()).map_err(|e| e.to_string())?;
                        Ok(summarize(model.as_ref(), trace, spec.gap_threshold))
                    });
                if let Err(e) = &outcome {
                    log::error!("{id} seed {seed}: {e}");
                }
                CellResult { algorithm: id, seed, outcome }
            })
            .collect()
    });
    write(&dir.join("summary.csv"), &summary_csv(spec, &cells, dim))?;
    let summary = aggregate(spec, &cells);
    Ok(ResultBundle { spec_hash: hash, directory: dir, cells, summary })
}
