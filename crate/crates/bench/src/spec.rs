//! Experiment specifications: parsing, overrides, canonical form and hash.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surropt::gp::KernelFamily;
use toml::{Table, Value};

use crate::error::{BenchError, Result};
use crate::registry::{resolve_model, Algorithm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    /// Homoscedastic noise level replacing the model's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub id: String,
    /// Algorithm-specific settings; every default can be overridden here.
    #[serde(default)]
    pub config: Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    /// Covariance family for the GP-based algorithms.
    pub kernel: KernelFamily,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    pub budget: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Optimality gap at which budget-to-threshold is recorded.
    #[serde(default = "default_gap_threshold")]
    pub gap_threshold: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_gap_threshold() -> f64 {
    0.05
}

/// Parse the right-hand side of `key=value`: a TOML value when it parses as
/// one, a bare string otherwise.
fn parse_override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Set a dotted path (`algorithms.0.config.reps`) inside a document,
/// creating intermediate tables as needed.
pub fn apply_override(doc: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| BenchError::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(BenchError::config(key, "empty path segment"));
    }
    let value = parse_override_value(raw.trim());
    let mut slot: &mut Value = doc
        .entry(parts[0].to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    for (depth, part) in parts.iter().enumerate().skip(1) {
        let here = parts[..depth].join(".");
        slot = match slot {
            Value::Table(t) => t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new())),
            Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| BenchError::config(key, format!("`{here}` is an array; expected an index")))?;
                let len = a.len();
                a.get_mut(i).ok_or_else(|| BenchError::config(key, format!("index {i} out of range for `{here}` (length {len})")))?
            }
            _ => return Err(BenchError::config(key, format!("`{here}` is not a table"))),
        };
    }
    *slot = value;
    Ok(())
}

impl ExperimentSpec {
    /// Parse a document after applying `key=value` overrides, then check
    /// that every id resolves.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Table = text.parse().map_err(|e: toml::de::Error| BenchError::config("<document>", e.message()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn from_table(doc: Table) -> Result<Self> {
        let spec: Self = Value::Table(doc).try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("<document>")
                .to_string();
            BenchError::config(key, msg)
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        resolve_model(&self.model)?;
        if self.algorithms.is_empty() {
            return Err(BenchError::config("algorithms", "at least one algorithm is required"));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            Algorithm::from_spec(a, self.prior.as_ref(), &format!("algorithms.{i}"))?;
        }
        if self.budget == 0 {
            return Err(BenchError::config("budget", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::config("seeds", "at least one seed is required"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(BenchError::config("seeds", format!("seed {dup} appears twice")));
        }
        if !(self.gap_threshold >= 0.0) {
            return Err(BenchError::config("gap_threshold", "must be nonnegative"));
        }
        Ok(())
    }

    /// Serialization with sorted keys; parsing it back gives the same spec.
    pub fn canonical(&self) -> String {
        let value = Value::try_from(self).expect("specs always serialize");
        toml::to_string(&value).expect("tables always serialize")
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
