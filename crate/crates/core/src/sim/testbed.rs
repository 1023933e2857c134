//! Bundled models with constructed ground truth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Bounds, SimRng, SimulationModel, TandemQueue};
use crate::error::{Error, Result};
use crate::stats::std_normal;

/// Known global maximizer and maximum of a testbed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub argmax: Vec<f64>,
    pub max: f64,
}

/// Observation noise standard deviation `σ(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    None,
    Homoscedastic { sd: f64 },
    /// `sd(x) = base + slope · t(x)`, where `t` is the mean normalized
    /// coordinate of `x` inside the box.
    Heteroscedastic { base: f64, slope: f64 },
}

impl Noise {
    pub fn sd(&self, x: &[f64], bounds: &Bounds) -> f64 {
        match *self {
            Noise::None => 0.0,
            Noise::Homoscedastic { sd } => sd,
            Noise::Heteroscedastic { base, slope } => {
                let t = x
                    .iter()
                    .zip(bounds.lower.iter().zip(&bounds.upper))
                    .map(|(v, (l, u))| if u > l { (v - l) / (u - l) } else { 0.0 })
                    .sum::<f64>()
                    / x.len().max(1) as f64;
                base + slope * t
            }
        }
    }

    fn draw(&self, x: &[f64], bounds: &Bounds, rng: &mut SimRng) -> f64 {
        match self {
            Noise::None => 0.0,
            _ => self.sd(x, bounds) * std_normal(rng),
        }
    }
}

/// `f(x) = f* − (x − x*)ᵀA(x − x*)` with `A` positive definite, observed with
/// additive noise. Gradient observations carry noise correlated with the
/// value noise.
#[derive(Clone, Debug)]
pub struct Quadratic {
    name: String,
    a: DMatrix<f64>,
    argmax: Vec<f64>,
    max: f64,
    bounds: Bounds,
    pub noise: Noise,
    /// Correlation between value noise and each gradient-noise coordinate.
    pub gradient_correlation: f64,
}

impl Quadratic {
    pub fn new(name: &str, a: DMatrix<f64>, argmax: Vec<f64>, max: f64, bounds: Bounds, noise: Noise) -> Result<Self> {
        let d = argmax.len();
        if a.nrows() != d || a.ncols() != d || bounds.dim() != d {
            return Err(Error::Dimension { expected: d, got: a.nrows() });
        }
        if a.clone().cholesky().is_none() {
            return Err(Error::Domain("curvature matrix must be positive definite".into()));
        }
        if !bounds.contains(&argmax) {
            return Err(Error::Domain("argmax must lie inside the box".into()));
        }
        Ok(Self { name: name.into(), a, argmax, max, bounds, noise, gradient_correlation: 0.5 })
    }

    pub fn two_dim(noise: Noise) -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.2]);
        Self::new("quadratic-2d", a, vec![0.7, -0.4], 5.0, Bounds::cube(2, -3.0, 3.0), noise)
            .expect("valid bundled quadratic")
    }

    pub fn five_dim(noise: Noise) -> Self {
        let mut a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.5, 1.0, 0.8, 0.6]));
        for i in 0..4 {
            a[(i, i + 1)] = 0.2;
            a[(i + 1, i)] = 0.2;
        }
        Self::new("quadratic-5d", a, vec![0.5, -0.5, 1.0, 0.0, -1.0], 10.0, Bounds::cube(5, -3.0, 3.0), noise)
            .expect("valid bundled quadratic")
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        let e = DVector::from_iterator(x.len(), x.iter().zip(&self.argmax).map(|(a, b)| a - b));
        self.max - e.dot(&(&self.a * &e))
    }

    pub fn true_gradient(&self, x: &[f64]) -> Vec<f64> {
        let e = DVector::from_iterator(x.len(), x.iter().zip(&self.argmax).map(|(a, b)| a - b));
        (-2.0 * (&self.a * e)).iter().copied().collect()
    }
}

impl SimulationModel for Quadratic {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.argmax.len()
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&self, x: &[f64], rng: &mut SimRng) -> Result<f64> {
        Ok(self.mean(x) + self.noise.draw(x, &self.bounds, rng))
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn evaluate_with_gradient(&self, x: &[f64], rng: &mut SimRng) -> Result<(f64, Vec<f64>)> {
        let sd = self.noise.sd(x, &self.bounds);
        let mut g = self.true_gradient(x);
        if sd == 0.0 {
            return Ok((self.mean(x), g));
        }
        let eps: f64 = std_normal(rng);
        let rho = self.gradient_correlation;
        for gj in &mut g {
            let own: f64 = std_normal(rng);
            *gj += sd * (rho * eps + (1.0 - rho * rho).sqrt() * own);
        }
        Ok((self.mean(x) + sd * eps, g))
    }

    fn true_mean(&self, x: &[f64]) -> Option<f64> {
        Some(self.mean(x))
    }

    fn ground_truth(&self) -> Option<GroundTruth> {
        Some(GroundTruth { argmax: self.argmax.clone(), max: self.max })
    }
}

/// A Gaussian bump `height · exp(−‖x − center‖² / (2 width²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub height: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

/// Sum of Gaussian bumps on the unit cube, observed with noise.
#[derive(Clone, Debug)]
pub struct Multimodal {
    name: String,
    bumps: Vec<Bump>,
    bounds: Bounds,
    truth: GroundTruth,
    pub noise: Noise,
}

impl Multimodal {
    pub fn new(name: &str, bumps: Vec<Bump>, noise: Noise) -> Result<Self> {
        let d = bumps.first().map(|b| b.center.len()).ok_or_else(|| Error::Domain("no bumps".into()))?;
        if bumps.iter().any(|b| b.center.len() != d || !(b.width > 0.0)) {
            return Err(Error::Domain("bumps need a common dimension and positive widths".into()));
        }
        let bounds = Bounds::cube(d, 0.0, 1.0);
        let mut model = Self {
            name: name.into(),
            bumps,
            bounds,
            truth: GroundTruth { argmax: vec![], max: f64::NEG_INFINITY },
            noise,
        };
        model.truth = model.locate_max();
        Ok(model)
    }

    pub fn one_dim(noise: Noise) -> Self {
        let bumps = vec![
            Bump { height: 1.0, center: vec![0.62], width: 0.07 },
            Bump { height: 0.75, center: vec![0.2], width: 0.08 },
            Bump { height: 0.5, center: vec![0.9], width: 0.04 },
        ];
        Self::new("multimodal-1d", bumps, noise).expect("valid bundled surface")
    }

    pub fn two_dim(noise: Noise) -> Self {
        let bumps = vec![
            Bump { height: 1.0, center: vec![0.7, 0.3], width: 0.1 },
            Bump { height: 0.7, center: vec![0.25, 0.7], width: 0.12 },
            Bump { height: 0.5, center: vec![0.8, 0.85], width: 0.08 },
        ];
        Self::new("multimodal-2d", bumps, noise).expect("valid bundled surface")
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let r2: f64 = x.iter().zip(&b.center).map(|(a, c)| (a - c) * (a - c)).sum();
                b.height * (-r2 / (2.0 * b.width * b.width)).exp()
            })
            .sum()
    }

    /// Start from the tallest bump centre and refine by compass search.
    fn locate_max(&self) -> GroundTruth {
        let mut best = self
            .bumps
            .iter()
            .map(|b| b.center.clone())
            .max_by(|a, b| self.mean(a).total_cmp(&self.mean(b)))
            .expect("nonempty");
        let mut fbest = self.mean(&best);
        let mut step = 0.01;
        while step > 1e-13 {
            let mut improved = false;
            for j in 0..best.len() {
                for s in [step, -step] {
                    let mut cand = best.clone();
                    cand[j] = (cand[j] + s).clamp(0.0, 1.0);
                    let f = self.mean(&cand);
                    if f > fbest {
                        best = cand;
                        fbest = f;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        GroundTruth { argmax: best, max: fbest }
    }
}

impl SimulationModel for Multimodal {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.bounds.dim()
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&self, x: &[f64], rng: &mut SimRng) -> Result<f64> {
        Ok(self.mean(x) + self.noise.draw(x, &self.bounds, rng))
    }

    fn true_mean(&self, x: &[f64]) -> Option<f64> {
        Some(self.mean(x))
    }

    fn ground_truth(&self) -> Option<GroundTruth> {
        Some(self.truth.clone())
    }
}

/// Identifiers of the bundled models, in catalog order.
pub const TESTBED_IDS: [&str; 5] = ["quadratic-2d", "quadratic-5d", "multimodal-1d", "multimodal-2d", "tandem-queue"];

/// Build a bundled model by id. `noise` overrides the model's default noise;
/// it is ignored by the queue, whose noise is intrinsic.
pub fn testbed_model(id: &str, noise: Option<Noise>) -> Result<Box<dyn SimulationModel>> {
    let default_sd = Noise::Homoscedastic { sd: 0.1 };
    Ok(match id {
        "quadratic-2d" => Box::new(Quadratic::two_dim(noise.unwrap_or(default_sd))),
        "quadratic-5d" => Box::new(Quadratic::five_dim(noise.unwrap_or(default_sd))),
        "multimodal-1d" => Box::new(Multimodal::one_dim(noise.unwrap_or(default_sd))),
        "multimodal-2d" => Box::new(Multimodal::two_dim(noise.unwrap_or(default_sd))),
        "tandem-queue" => Box::new(TandemQueue::standard()),
        other => return Err(Error::Parse(format!("unknown model id '{other}'"))),
    })
}

/// Every bundled model with its default noise.
pub fn testbed_catalog() -> Vec<Box<dyn SimulationModel>> {
    TESTBED_IDS.iter().map(|id| testbed_model(id, None).expect("bundled id")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ReplicationStreams;

    #[test]
    fn quadratic_truth_is_maximum() {
        let q = Quadratic::two_dim(Noise::None);
        let gt = q.ground_truth().unwrap();
        assert_eq!(gt.argmax, vec![0.7, -0.4]);
        assert_eq!(q.mean(&gt.argmax), gt.max);
        assert!(q.true_gradient(&gt.argmax).iter().all(|g| *g == 0.0));
        assert!(q.mean(&[0.0, 0.0]) < gt.max);
    }

    #[test]
    fn quadratic_gradient_matches_differences() {
        let q = Quadratic::five_dim(Noise::None);
        let x = [0.3, 0.1, -0.7, 1.2, 0.4];
        let g = q.true_gradient(&x);
        for j in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += 1e-5;
            xm[j] -= 1e-5;
            let fd = (q.mean(&xp) - q.mean(&xm)) / 2e-5;
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn multimodal_1d_truth_matches_closed_form() {
        let m = Multimodal::one_dim(Noise::None);
        let gt = m.ground_truth().unwrap();
        assert!((gt.argmax[0] - 0.62).abs() < 0.01);
        assert_eq!(m.mean(&gt.argmax), gt.max);
        for k in 0..=10_000 {
            let x = k as f64 / 10_000.0;
            assert!(m.mean(&[x]) <= gt.max + 1e-12);
        }
    }

    #[test]
    fn multimodal_2d_truth_dominates_grid() {
        let m = Multimodal::two_dim(Noise::None);
        let gt = m.ground_truth().unwrap();
        assert!((gt.argmax[0] - 0.7).abs() < 0.02 && (gt.argmax[1] - 0.3).abs() < 0.02);
        for i in 0..=200 {
            for j in 0..=200 {
                assert!(m.mean(&[i as f64 / 200.0, j as f64 / 200.0]) <= gt.max + 1e-12);
            }
        }
    }

    #[test]
    fn catalog_has_every_model() {
        let names: Vec<_> = testbed_catalog().iter().map(|m| m.name().to_string()).collect();
        assert_eq!(names, TESTBED_IDS);
        assert!(testbed_model("nope", None).is_err());
    }

    #[test]
    fn heteroscedastic_noise_grows() {
        let n = Noise::Heteroscedastic { base: 0.1, slope: 0.4 };
        let b = Bounds::cube(1, 0.0, 1.0);
        assert!(n.sd(&[0.0], &b) < n.sd(&[1.0], &b));
    }

    #[test]
    fn gradient_noise_is_correlated() {
        let q = Quadratic::two_dim(Noise::Homoscedastic { sd: 1.0 });
        let mut s = ReplicationStreams::new(4);
        let x = [0.0, 0.0];
        let (f0, g0) = (q.mean(&x), q.true_gradient(&x));
        let mut cov = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let (y, g) = q.evaluate_with_gradient(&x, &mut s.next_stream()).unwrap();
            cov += (y - f0) * (g[0] - g0[0]);
        }
        cov /= n as f64;
        assert!((cov - 0.5).abs() < 0.05, "cov {cov}");
    }
}
