//! Gaussian-process-based search with an inversion-free surrogate.
//!
//! The surrogate predicts `μ̃ₙ(x) = λ(x)ᵀȳ` from interpolating weights, with
//! variance `σ̃ₙ²(x) = K(x, x) − 2λ(x)ᵀk(x) + λ(x)ᵀ(K + Σ)λ(x)`. New points
//! are sampled with density proportional to `P(Z(x) > c)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::CovarianceFunction;
use crate::linalg::sq_dist;
use crate::sim::{Bounds, Dataset};
use crate::stats::{normal_sf, std_normal};

/// Interpolating weight families `λ(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFamily {
    /// `λᵢ(x) ∝ ‖x − xᵢ‖^(−p)`; `p = d + 1` when unset.
    InverseDistance { power: Option<f64> },
}

impl Default for WeightFamily {
    fn default() -> Self {
        Self::InverseDistance { power: None }
    }
}

impl WeightFamily {
    /// Weights of the `points` at `x`. Exact hits share the unit mass.
    pub fn weights(&self, points: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        let Self::InverseDistance { power } = *self;
        let p = power.unwrap_or(x.len() as f64 + 1.0);
        let d2: Vec<f64> = points.iter().map(|q| sq_dist(q, x)).collect();
        let hits: Vec<usize> = (0..d2.len()).filter(|&i| d2[i] == 0.0).collect();
        if !hits.is_empty() {
            let mut w = vec![0.0; points.len()];
            for &i in &hits {
                w[i] = 1.0 / hits.len() as f64;
            }
            return w;
        }
        // Scale by the nearest distance so the largest raw weight is 1.
        let nearest = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let raw: Vec<f64> = d2.iter().map(|v| (nearest / v).powf(p / 2.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    /// Check nonnegativity, unit sum and interpolation at the data points
    /// and at `probes`.
    pub fn validate(&self, points: &[Vec<f64>], probes: &[Vec<f64>]) -> Result<()> {
        for (j, x) in points.iter().enumerate() {
            let w = self.weights(points, x);
            let dup = points.iter().filter(|q| *q == x).count() as f64;
            for (i, wi) in w.iter().enumerate() {
                let want = if points[i] == *x { 1.0 / dup } else { 0.0 };
                if *wi != want {
                    return Err(Error::Domain(format!("weights do not interpolate data point {j}")));
                }
            }
        }
        for x in probes {
            let w = self.weights(points, x);
            if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!("weights at {x:?} are negative or do not sum to one")));
            }
        }
        Ok(())
    }
}

/// The inversion-free GPS surrogate.
#[derive(Clone, Debug)]
pub struct GpsModel {
    kernel: CovarianceFunction,
    family: WeightFamily,
    points: Vec<Vec<f64>>,
    means: DVector<f64>,
    /// `K + Σ` over the data.
    k_sigma: DMatrix<f64>,
}

/// Build the surrogate. Only kernel evaluations and products are used.
pub fn gps_build_model(kernel: CovarianceFunction, data: &Dataset, family: WeightFamily) -> Result<GpsModel> {
    if data.is_empty() {
        return Err(Error::Domain("GPS needs at least one observation".into()));
    }
    let points = data.points();
    let noise = data.noise_diag()?;
    let probes: Vec<Vec<f64>> = points
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect())
        .collect();
    family.validate(&points, &probes)?;
    let mut k_sigma = kernel.gram(&points);
    for (i, s) in noise.iter().enumerate() {
        k_sigma[(i, i)] += s;
    }
    Ok(GpsModel { kernel, family, means: DVector::from_vec(data.means()), points, k_sigma })
}

impl GpsModel {
    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        self.family.weights(&self.points, x)
    }

    /// `μ̃ₙ(x) = λ(x)ᵀȳ`; at a data point this is `ȳᵢ` exactly.
    pub fn mean(&self, x: &[f64]) -> f64 {
        let w = self.weights(x);
        let hits: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0).collect();
        if hits.len() == 1 && w[hits[0]] == 1.0 {
            return self.means[hits[0]];
        }
        w.iter().zip(self.means.iter()).map(|(a, b)| a * b).sum()
    }

    /// `σ̃ₙ²(x)`, clamped at zero.
    pub fn variance(&self, x: &[f64]) -> f64 {
        let lam = DVector::from_vec(self.weights(x));
        let k = self.kernel.cross(&self.points, x);
        let v = self.kernel.eval(x, x) - 2.0 * lam.dot(&k) + lam.dot(&(&self.k_sigma * &lam));
        v.max(0.0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest data mean, the default threshold `c`.
    pub fn best_mean(&self) -> f64 {
        self.means.max()
    }
}

/// `P(Z > c)` for `Z ~ N(mean, var)`, with the `var = 0` limits.
fn exceedance(mean: f64, var: f64, c: f64) -> f64 {
    if var > 0.0 {
        normal_sf((c - mean) / var.sqrt())
    } else if mean > c {
        1.0
    } else if mean == c {
        0.5
    } else {
        0.0
    }
}

/// Unnormalized sampling weights `P(Z(x) > c)` over `grid`.
pub fn gps_weights(model: &GpsModel, c: f64, grid: &[Vec<f64>]) -> Vec<f64> {
    grid.iter().map(|x| exceedance(model.mean(x), model.variance(x), c)).collect()
}

/// Scale nonnegative weights to sum to one; all-zero weights fall back to
/// uniform.
pub fn normalize_weights(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        log::warn!("all sampling weights vanished; using the uniform density");
        return vec![1.0 / w.len() as f64; w.len()];
    }
    w.iter().map(|v| v / total).collect()
}

/// Normalized GPS density over `grid`.
pub fn gps_density(model: &GpsModel, c: f64, grid: &[Vec<f64>]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Domain("GPS grid is empty".into()));
    }
    Ok(normalize_weights(&gps_weights(model, c, grid)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GpsSampler {
    AcceptanceRejection,
    /// Metropolis random walk over grid indices, `±width` with wraparound;
    /// one sample kept every `thin` steps after `burn_in`.
    Mcmc { width: usize, burn_in: usize, thin: usize },
}

impl Default for GpsSampler {
    fn default() -> Self {
        Self::AcceptanceRejection
    }
}

const MIN_ACCEPTANCE: f64 = 1e-6;

/// Draw `count` grid indices from the density `weights` (normalization is
/// not required).
pub fn gps_sample<R: Rng + ?Sized>(weights: &[f64], sampler: GpsSampler, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = weights.len();
    if n == 0 || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Domain("sampling weights must be nonnegative and nonempty".into()));
    }
    let top = weights.iter().copied().fold(0.0, f64::max);
    let rate = if top > 0.0 { weights.iter().sum::<f64>() / (n as f64 * top) } else { 0.0 };
    if rate < MIN_ACCEPTANCE {
        return Err(Error::Envelope { rate });
    }
    let mut out = Vec::with_capacity(count);
    match sampler {
        GpsSampler::AcceptanceRejection => {
            while out.len() < count {
                let i = rng.random_range(0..n);
                if rng.random::<f64>() * top < weights[i] {
                    out.push(i);
                }
            }
        }
        GpsSampler::Mcmc { width, burn_in, thin } => {
            let width = width.clamp(1, n.saturating_sub(1).max(1));
            let mut state = loop {
                let i = rng.random_range(0..n);
                if weights[i] > 0.0 {
                    break i;
                }
            };
            let step = |state: &mut usize, rng: &mut R| {
                if n == 1 {
                    return;
                }
                let k = rng.random_range(1..=width);
                let j = if rng.random::<bool>() { (*state + k) % n } else { (*state + n - k % n) % n };
                if rng.random::<f64>() * weights[*state] < weights[j] {
                    *state = j;
                }
            };
            for _ in 0..burn_in {
                step(&mut state, rng);
            }
            while out.len() < count {
                for _ in 0..thin.max(1) {
                    step(&mut state, rng);
                }
                out.push(state);
            }
        }
    }
    Ok(out)
}

/// Gaussian jitter with standard deviation `bandwidth`, projected into the
/// box (the smoothed continuous extension of the grid density).
pub fn smooth_sample<R: Rng + ?Sized>(x: &[f64], bandwidth: f64, bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    let moved: Vec<f64> = x.iter().map(|v| v + bandwidth * std_normal(rng)).collect();
    bounds.project(&moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::factorization_count;
    use crate::sim::AggregatedObservation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn random_data(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
                AggregatedObservation::new(x, rng.random_range(-1.0..1.0), 2, rng.random_range(0.01..0.1))
            })
            .collect();
        Dataset::from_observations(d, obs).unwrap()
    }

    fn kernel() -> CovarianceFunction {
        CovarianceFunction::gaussian(1.0, 0.3).unwrap()
    }

    #[test]
    fn interpolates_exactly_without_factorizing() {
        for seed in 0..10 {
            let data = random_data(seed, 15, 2);
            let before = factorization_count();
            let m = gps_build_model(kernel(), &data, WeightFamily::default()).unwrap();
            for o in &data.observations {
                assert_eq!(m.mean(&o.point), o.mean);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
                m.variance(&x);
                let w = m.weights(&x);
                assert!(w.iter().all(|v| *v >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            assert_eq!(factorization_count(), before);
        }
    }

    #[test]
    fn single_point_model() {
        let data = Dataset::from_points(&[vec![0.3]], &[1.7], 0.2).unwrap();
        let k = kernel();
        let m = gps_build_model(k.clone(), &data, WeightFamily::default()).unwrap();
        for x in [0.0, 0.3, 0.9] {
            assert_eq!(m.mean(&[x]), 1.7);
            let want = k.eval(&[x], &[x]) - 2.0 * k.eval(&[0.3], &[x]) + k.eval(&[0.3], &[0.3]) + 0.2;
            assert!((m.variance(&[x]) - want.max(0.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn variance_is_nonnegative() {
        let data = random_data(3, 25, 2);
        let m = gps_build_model(kernel(), &data, WeightFamily::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x = vec![rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2)];
            let lam = DVector::from_vec(m.weights(&x));
            let raw = m.kernel.eval(&x, &x) - 2.0 * lam.dot(&m.kernel.cross(&m.points, &x)) + lam.dot(&(&m.k_sigma * &lam));
            assert!(raw >= -1e-12, "{raw}");
        }
    }

    #[test]
    fn density_symmetry_and_median() {
        let data = Dataset::from_points(&[vec![0.0], vec![1.0]], &[0.5, 0.5], 0.01).unwrap();
        let m = gps_build_model(kernel(), &data, WeightFamily::default()).unwrap();
        let h = gps_density(&m, 0.9, &[vec![0.25], vec![0.75]]).unwrap();
        assert!((h[0] - 0.5).abs() < 1e-12 && (h[1] - 0.5).abs() < 1e-12);
        let w = gps_weights(&m, 0.5, &[vec![0.0]]);
        assert_eq!(w[0], 0.5);
    }

    #[test]
    fn density_matches_independent_normal_tail() {
        let data = random_data(8, 6, 1);
        let m = gps_build_model(kernel(), &data, WeightFamily::default()).unwrap();
        let grid = vec![vec![0.1], vec![0.45], vec![0.8]];
        let c = m.best_mean();
        let h = gps_density(&m, c, &grid).unwrap();
        let raw: Vec<f64> = grid
            .iter()
            .map(|x| Normal::new(m.mean(x), m.variance(x).sqrt()).unwrap().sf(c))
            .collect();
        let total: f64 = raw.iter().sum();
        for (a, b) in h.iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_is_scale_free() {
        let w = [0.3, 0.1, 0.0, 0.6];
        let scaled: Vec<f64> = w.iter().map(|v| v * 8.0).collect();
        assert_eq!(normalize_weights(&w), normalize_weights(&scaled));
        assert_eq!(normalize_weights(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    fn frequencies(idx: &[usize], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n];
        for &i in idx {
            c[i] += 1.0;
        }
        c
    }

    #[test]
    fn acceptance_rejection_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000.0;
        let uni = frequencies(&gps_sample(&[1.0; 4], GpsSampler::AcceptanceRejection, 10_000, &mut rng).unwrap(), 4);
        let sd = (n * 0.25 * 0.75f64).sqrt();
        assert!(uni.iter().all(|c| (c - 2500.0).abs() < 5.0 * sd));
        let two = frequencies(&gps_sample(&[0.9, 0.1], GpsSampler::AcceptanceRejection, 10_000, &mut rng).unwrap(), 2);
        assert!((two[0] - 9000.0).abs() < 5.0 * (n * 0.09f64).sqrt());
    }

    #[test]
    fn mcmc_chain_matches_target() {
        let w: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let total: f64 = w.iter().sum();
        let sampler = GpsSampler::Mcmc { width: 5, burn_in: 1000, thin: 10 };
        let idx = gps_sample(&w, sampler, 10_000, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let f = frequencies(&idx, 10);
        let chi2: f64 = f.iter().zip(&w).map(|(o, wi)| {
            let e = 10_000.0 * wi / total;
            (o - e).powi(2) / e
        }).sum();
        // 99th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "{chi2}");
    }

    #[test]
    fn sampling_is_seeded_and_guards_the_envelope() {
        let w = [0.2, 0.5, 0.3];
        let a = gps_sample(&w, GpsSampler::AcceptanceRejection, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = gps_sample(&w, GpsSampler::AcceptanceRejection, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let mut spike = vec![0.0; 2_000_000];
        spike[0] = 1.0;
        assert!(matches!(gps_sample(&spike, GpsSampler::AcceptanceRejection, 1, &mut ChaCha8Rng::seed_from_u64(1)), Err(Error::Envelope { .. })));
    }
}
