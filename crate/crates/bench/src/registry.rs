//! Name → model and name → algorithm lookups.

use serde::de::DeserializeOwned;
use surropt::optimizers::{
    rsm_run, sequential_template, spas_run, strong_run, Acquisition, Budget, OptimizationTrace, RsmConfig, SpasConfig,
    StrongConfig, TemplateConfig, UcbSchedule,
};
use surropt::sim::{testbed_model, Noise, SimulationModel, TESTBED_IDS};
use toml::{Table, Value};

use crate::error::{BenchError, Result};
use crate::spec::{AlgorithmSpec, ModelSpec, PriorSpec};

pub const ALGORITHM_IDS: [&str; 7] = ["rsm", "strong", "spas", "kg", "kg-saa", "ucb", "gps"];

pub fn algorithm_summary(id: &str) -> &'static str {
    match id {
        "rsm" => "two-stage response surface methodology (steepest ascent, then second-order fits)",
        "strong" => "trust-region method with statistically tested steps",
        "spas" => "MPA sampling with shrinking-ball estimates and an interpolating GP",
        "kg" => "GP template, knowledge gradient over the data points (discrete proxy)",
        "kg-saa" => "GP template, knowledge gradient by sample average approximation",
        "ucb" => "GP template, upper confidence bound with γₙ = a·ln(n+1)",
        "gps" => "GP template, GPS sampling from an inversion-free surrogate",
        _ => "",
    }
}

pub fn resolve_model(spec: &ModelSpec) -> Result<Box<dyn SimulationModel>> {
    if !TESTBED_IDS.contains(&spec.id.as_str()) {
        return Err(BenchError::config("model.id", format!("unknown model '{}'; known: {}", spec.id, TESTBED_IDS.join(", "))));
    }
    let noise = match spec.noise_sd {
        None => None,
        Some(sd) if sd == 0.0 => Some(Noise::None),
        Some(sd) if sd > 0.0 && sd.is_finite() => Some(Noise::Homoscedastic { sd }),
        Some(sd) => return Err(BenchError::config("model.noise_sd", format!("must be nonnegative, got {sd}"))),
    };
    testbed_model(&spec.id, noise).map_err(|e| BenchError::config("model", e))
}

/// A fully configured algorithm.
#[derive(Clone, Debug, PartialEq)]
pub enum Algorithm {
    Rsm { cfg: RsmConfig, start: Option<Vec<f64>>, step: Option<f64> },
    Strong(StrongConfig),
    Spas(SpasConfig),
    Template { acquisition: Acquisition, cfg: TemplateConfig },
}

fn take<T: DeserializeOwned>(table: &mut Table, key: &str, path: &str) -> Result<Option<T>> {
    table
        .remove(key)
        .map(|v| v.try_into().map_err(|e: toml::de::Error| BenchError::config(format!("{path}.{key}"), e.message())))
        .transpose()
}

fn rest<T: DeserializeOwned>(table: Table, path: &str) -> Result<T> {
    Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        let field = msg.split('`').nth(1).filter(|_| msg.starts_with("unknown field"));
        BenchError::config(field.map_or(path.to_string(), |f| format!("{path}.{f}")), msg)
    })
}

impl Algorithm {
    /// Build from an id and its config table; `path` names the entry in
    /// error messages.
    pub fn from_spec(spec: &AlgorithmSpec, prior: Option<&PriorSpec>, path: &str) -> Result<Self> {
        let mut t = spec.config.clone();
        let cpath = format!("{path}.config");
        let kernel_set = t.contains_key("kernel");
        let template = |t: Table| -> Result<TemplateConfig> {
            let mut cfg: TemplateConfig = rest(t, &cpath)?;
            if let (Some(p), false) = (prior, kernel_set) {
                cfg.kernel = p.kernel.clone();
            }
            Ok(cfg)
        };
        let alg = match spec.id.as_str() {
            "rsm" => {
                let start = take(&mut t, "start", &cpath)?;
                let step = take(&mut t, "step", &cpath)?;
                Self::Rsm { cfg: rest(t, &cpath)?, start, step }
            }
            "strong" => {
                let cfg: StrongConfig = rest(t, &cpath)?;
                cfg.validate().map_err(|e| BenchError::config(&cpath, e))?;
                Self::Strong(cfg)
            }
            "spas" => {
                let mut cfg: SpasConfig = rest(t, &cpath)?;
                if let (Some(p), false) = (prior, kernel_set) {
                    cfg.kernel = p.kernel.clone();
                }
                Self::Spas(cfg)
            }
            "kg" => Self::Template { acquisition: Acquisition::KgDiscrete, cfg: template(t)? },
            "kg-saa" => {
                let samples = take(&mut t, "samples", &cpath)?.unwrap_or(64);
                Self::Template { acquisition: Acquisition::KgSaa { samples }, cfg: template(t)? }
            }
            "ucb" => {
                let a = take(&mut t, "a", &cpath)?.unwrap_or(UcbSchedule::default().a);
                Self::Template { acquisition: Acquisition::Ucb { schedule: UcbSchedule { a } }, cfg: template(t)? }
            }
            "gps" => {
                let Acquisition::Gps { sampler, weights, threshold, smooth } = Acquisition::gps_default() else {
                    unreachable!("gps_default builds a GPS acquisition")
                };
                let acquisition = Acquisition::Gps {
                    sampler: take(&mut t, "sampler", &cpath)?.unwrap_or(sampler),
                    weights: take(&mut t, "weights", &cpath)?.unwrap_or(weights),
                    threshold: take(&mut t, "threshold", &cpath)?.or(threshold),
                    smooth: take(&mut t, "smooth", &cpath)?.unwrap_or(smooth),
                };
                Self::Template { acquisition, cfg: template(t)? }
            }
            other => {
                return Err(BenchError::config(
                    format!("{path}.id"),
                    format!("unknown algorithm '{other}'; known: {}", ALGORITHM_IDS.join(", ")),
                ))
            }
        };
        Ok(alg)
    }

    pub fn run(&self, model: &dyn SimulationModel, budget: u64, seed: u64) -> surropt::Result<OptimizationTrace> {
        let budget = Budget::new(budget)?;
        match self {
            Self::Rsm { cfg, start, step } => {
                let bounds = model.bounds();
                let start = start.clone().unwrap_or_else(|| bounds.center());
                let step = step.unwrap_or_else(|| 0.05 * bounds.widths().into_iter().fold(f64::INFINITY, f64::min));
                Ok(rsm_run(model, &start, step, budget, seed, cfg)?.trace)
            }
            Self::Strong(cfg) => Ok(strong_run(model, cfg, budget, seed)?.0),
            Self::Spas(cfg) => Ok(spas_run(model, cfg, budget, seed)?.trace),
            Self::Template { acquisition, cfg } => sequential_template(model, acquisition, cfg, budget, seed),
        }
    }
}
