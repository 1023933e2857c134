//! Acquisition criteria: knowledge gradient and GP-UCB.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpPosterior, Posterior};
use crate::stats::{normal_partial_moment, std_normal};

/// `E[max_i (a_i + b_i Z)] − max_i a_i` for standard normal `Z`.
///
/// Lines are sorted by slope, dominated ones dropped, and the Gaussian
/// partial moments between consecutive breakpoints summed.
pub fn expected_max_increment(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| b[i].total_cmp(&b[j]).then(a[i].total_cmp(&a[j])));
    // Equal slopes: keep the largest intercept (the last after sorting).
    let mut lines: Vec<(f64, f64)> = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        if k + 1 < idx.len() && b[idx[k + 1]] == b[i] {
            continue;
        }
        lines.push((a[i], b[i]));
    }
    // Upper envelope; `cuts[j]` is where `env[j]` overtakes `env[j - 1]`.
    let mut env: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    let mut cuts: Vec<f64> = Vec::with_capacity(lines.len());
    for (al, bl) in lines {
        loop {
            let Some(&(at, bt)) = env.last() else {
                env.push((al, bl));
                cuts.push(f64::NEG_INFINITY);
                break;
            };
            let c = (at - al) / (bl - bt);
            if c <= *cuts.last().expect("parallel to env") {
                env.pop();
                cuts.pop();
            } else {
                env.push((al, bl));
                cuts.push(c);
                break;
            }
        }
    }
    (1..env.len()).map(|j| (env[j].1 - env[j - 1].1) * normal_partial_moment(-cuts[j].abs())).sum()
}

/// `E[max_i (a_i + b_i Z)]`.
pub fn expected_max_affine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().copied().fold(f64::NEG_INFINITY, f64::max) + expected_max_increment(a, b)
}

/// Posterior quantities for repeated knowledge-gradient scoring against a
/// fixed reference set of points.
pub struct KgContext<'a> {
    post: &'a GpPosterior,
    set: Vec<Vec<f64>>,
    mu: Vec<f64>,
    /// `L⁻¹K(X, set)`, one column per set point.
    whitened: DMatrix<f64>,
    prior_cross: Box<dyn Fn(&[f64]) -> DVector<f64> + 'a>,
}

impl<'a> KgContext<'a> {
    /// Reference set = the data points (the discrete proxy).
    pub fn discrete(post: &'a GpPosterior) -> Result<Self> {
        Self::over(post, post.points().to_vec())
    }

    /// Reference set = an arbitrary finite set.
    pub fn over(post: &'a GpPosterior, set: Vec<Vec<f64>>) -> Result<Self> {
        let mu = set.iter().map(|p| post.mean_at(p)).collect::<Result<Vec<_>>>()?;
        let k = post.prior().cov.cross_matrix(post.points(), &set);
        let whitened = post.factor().half_solve_matrix(&k);
        let cov = post.prior().cov.clone();
        let set2 = set.clone();
        Ok(Self { post, set, mu, whitened, prior_cross: Box::new(move |x| cov.cross(&set2, x)) })
    }

    pub fn set(&self) -> &[Vec<f64>] {
        &self.set
    }

    pub fn means(&self) -> &[f64] {
        &self.mu
    }

    /// `(μₙ(x), Kₙ(x, x), Kₙ(set, x))`.
    fn moments(&self, x: &[f64]) -> Result<(f64, f64, DVector<f64>)> {
        let wx = self.post.whitened_cross(x);
        let cross = (self.prior_cross)(x) - self.whitened.tr_mul(&wx);
        let var = self.post.prior().cov.eval(x, x) - wx.norm_squared();
        Ok((self.post.mean_at(x)?, var.max(0.0), cross))
    }

    /// Slopes `δₙ(·, x) = Kₙ(·, x)/s` with `s² = Kₙ(x, x) + noise_var`,
    /// for the set and for `x` itself.
    pub fn slopes(&self, x: &[f64], noise_var: f64) -> Result<(f64, f64, DVector<f64>)> {
        let (mu_x, var_x, cross) = self.moments(x)?;
        let s2 = var_x + noise_var;
        if !(s2 > 0.0) {
            return Err(Error::Singular(format!("zero predictive variance at {x:?}")));
        }
        let s = s2.sqrt();
        Ok((mu_x, var_x / s, cross / s))
    }

    /// Knowledge gradient over `set ∪ {x}` in closed form.
    pub fn score(&self, x: &[f64], noise_var: f64) -> Result<f64> {
        let (mu_x, bx, b) = self.slopes(x, noise_var)?;
        let mut a = self.mu.clone();
        a.push(mu_x);
        let mut bs: Vec<f64> = b.iter().copied().collect();
        bs.push(bx);
        Ok(expected_max_increment(&a, &bs))
    }

    /// Sample-average knowledge gradient over the set alone:
    /// `mean_s max_g(μₙ(g) + δₙ(g, x)Z⁽ˢ⁾) − max_g μₙ(g)`.
    pub fn score_saa<R: Rng + ?Sized>(&self, x: &[f64], noise_var: f64, samples: usize, rng: &mut R) -> Result<f64> {
        if samples == 0 {
            return Err(Error::Domain("need at least one sample".into()));
        }
        let (_, _, b) = self.slopes(x, noise_var)?;
        let best = self.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for _ in 0..samples {
            let z = std_normal(rng);
            let m = self.mu.iter().zip(b.iter()).map(|(a, d)| a + d * z).fold(f64::NEG_INFINITY, f64::max);
            total += m - best;
        }
        Ok(total / samples as f64)
    }
}

/// Knowledge-gradient discrete proxy at `x` for a new observation whose
/// mean has variance `noise_var`.
pub fn kg_score_discrete(post: &GpPosterior, x: &[f64], noise_var: f64) -> Result<f64> {
    KgContext::discrete(post)?.score(x, noise_var)
}

/// Sample-average knowledge gradient with the inner max over `grid`.
pub fn kg_score_saa<R: Rng + ?Sized>(
    post: &GpPosterior,
    x: &[f64],
    grid: &[Vec<f64>],
    samples: usize,
    noise_var: f64,
    rng: &mut R,
) -> Result<f64> {
    KgContext::over(post, grid.to_vec())?.score_saa(x, noise_var, samples, rng)
}

/// `μₙ(x) + √(γ·Kₙ(x, x))`.
pub fn ucb_score<P: Posterior + ?Sized>(post: &P, x: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("UCB weight must be nonnegative, got {gamma}")));
    }
    Ok(post.mean_at(x)? + (gamma * post.var_at(x)?.max(0.0)).sqrt())
}

/// `γₙ = a · ln(n + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcbSchedule {
    pub a: f64,
}

impl Default for UcbSchedule {
    fn default() -> Self {
        Self { a: 2.0 }
    }
}

impl UcbSchedule {
    pub fn gamma(&self, n: usize) -> f64 {
        self.a * ((n + 1) as f64).ln()
    }
}
