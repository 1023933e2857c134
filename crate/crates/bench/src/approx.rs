//! Exact versus low-rank posterior comparison tables.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use surropt::gp::{posterior, CovarianceFunction, GpPrior, KernelDescriptor, Posterior};
use surropt::lowrank::{build_approx, synthetic_dataset, ApproxVariant};
use surropt::sim::fmt_f64;

use crate::error::{BenchError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxCompareSpec {
    /// Size of the synthetic 2-d dataset.
    pub n: usize,
    pub ms: Vec<usize>,
    #[serde(default = "all_variants")]
    pub variants: Vec<ApproxVariant>,
    #[serde(default = "default_kernel")]
    pub kernel: KernelDescriptor,
    #[serde(default)]
    pub seed: u64,
    /// Queries on a regular grid over the unit square, rounded up to a
    /// square count.
    #[serde(default = "default_queries")]
    pub queries: usize,
    /// Above this `n` the exact baseline is skipped.
    #[serde(default = "default_exact_limit")]
    pub exact_limit: usize,
}

fn all_variants() -> Vec<ApproxVariant> {
    vec![ApproxVariant::NystromNaive, ApproxVariant::NystromKernel, ApproxVariant::Rff]
}

fn default_kernel() -> KernelDescriptor {
    KernelDescriptor::Gaussian { tau: 1.0, eta: 0.2 }
}

fn default_queries() -> usize {
    196
}

fn default_exact_limit() -> usize {
    4000
}

impl ApproxCompareSpec {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| BenchError::config("<document>", e.message()))?;
        for o in overrides {
            crate::spec::apply_override(&mut doc, o)?;
        }
        let spec: Self = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| BenchError::config("<document>", e.message()))?;
        if spec.n == 0 || spec.ms.is_empty() || spec.ms.contains(&0) || spec.queries == 0 {
            return Err(BenchError::config("n/ms/queries", "n, every m and queries must be positive"));
        }
        Ok(spec)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text, overrides)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxRow {
    pub variant: ApproxVariant,
    pub n: usize,
    pub m: usize,
    /// Largest errors against the exact posterior on the query grid; unset
    /// when the baseline was skipped.
    pub max_mean_error: Option<f64>,
    pub max_var_error: Option<f64>,
    pub build_ms: f64,
    pub baseline_skipped: bool,
}

fn query_grid(count: usize) -> Vec<Vec<f64>> {
    let k = (count as f64).sqrt().ceil() as usize;
    let at = |i: usize| (i as f64 + 0.5) / k as f64;
    (0..k).flat_map(|i| (0..k).map(move |j| vec![at(i), at(j)])).collect()
}

/// One row per (variant, m); Nyström rows with `m > n` are skipped.
pub fn approx_compare(spec: &ApproxCompareSpec) -> Result<Vec<ApproxRow>> {
    let prior = GpPrior::zero_mean(CovarianceFunction::from_descriptor(&spec.kernel)?);
    let data = synthetic_dataset(spec.n, spec.seed);
    let queries = query_grid(spec.queries);
    let baseline_skipped = spec.n > spec.exact_limit;
    let exact = if baseline_skipped {
        log::warn!("n = {} exceeds exact_limit = {}; exact baseline skipped", spec.n, spec.exact_limit);
        None
    } else {
        let post = posterior(prior.clone(), data.clone())?;
        let (mu, var) = post.mean_var_batch(&queries)?;
        Some((mu, var))
    };
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        for &m in &spec.ms {
            if m > spec.n && variant != ApproxVariant::Rff {
                log::warn!("skipping {} with m = {m} > n = {}", variant.name(), spec.n);
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(m as u64));
            let start = Instant::now();
            let approx = build_approx(variant, prior.clone(), &data, m, &mut rng)?;
            let build_ms = start.elapsed().as_secs_f64() * 1e3;
            let (max_mean_error, max_var_error) = match &exact {
                Some((mu, var)) => {
                    let mut em: f64 = 0.0;
                    let mut ev: f64 = 0.0;
                    for (i, q) in queries.iter().enumerate() {
                        em = em.max((approx.mean_at(q)? - mu[i]).abs());
                        ev = ev.max((approx.var_report(q)?.value - var[i]).abs());
                    }
                    (Some(em), Some(ev))
                }
                None => (None, None),
            };
            rows.push(ApproxRow { variant, n: spec.n, m, max_mean_error, max_var_error, build_ms, baseline_skipped });
        }
    }
    Ok(rows)
}

pub fn approx_table_csv(rows: &[ApproxRow]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut out = String::from("variant,n,m,max_mean_error,max_var_error,build_ms,baseline_skipped\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.variant.name(),
            r.n,
            r.m,
            opt(r.max_mean_error),
            opt(r.max_var_error),
            fmt_f64(r.build_ms),
            r.baseline_skipped
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_rows_are_exact() {
        let spec = ApproxCompareSpec::parse("n = 60\nms = [60]\nvariants = [\"nystrom_naive\", \"nystrom_kernel\"]", &[]).unwrap();
        let rows = approx_compare(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert!(r.max_mean_error.unwrap() < 1e-6, "{r:?}");
            assert!(r.max_var_error.unwrap() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn baseline_skip_is_flagged() {
        let spec = ApproxCompareSpec::parse("n = 50\nms = [10]\nexact_limit = 20\nvariants = [\"rff\"]", &[]).unwrap();
        let rows = approx_compare(&spec).unwrap();
        assert!(rows[0].baseline_skipped && rows[0].max_mean_error.is_none());
        let csv = approx_table_csv(&rows);
        assert!(csv.lines().nth(1).unwrap().ends_with(",true"));
    }

    #[test]
    fn grid_is_square() {
        assert_eq!(query_grid(10).len(), 16);
        assert_eq!(query_grid(196).len(), 196);
    }
}
