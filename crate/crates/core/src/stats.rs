//! Scalar distribution helpers.

use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use libm::erfc;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// One standard normal draw.
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(Z > z)` for standard normal `Z`, accurate in the far tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `E[(μ + σZ)⁺]`-style helper: `f(z) = zΦ(z) + φ(z)`.
pub fn normal_partial_moment(z: f64) -> f64 {
    z * normal_cdf(z) + normal_pdf(z)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).map(|n| n.inverse_cdf(p)).unwrap_or(f64::NAN)
}

/// Upper-tail probability of Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    match StudentsT::new(0.0, 1.0, dof) {
        Ok(dist) => dist.sf(t),
        Err(_) => f64::NAN,
    }
}

/// Upper-tail probability of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    match FisherSnedecor::new(d1, d2) {
        Ok(dist) => dist.sf(f),
        Err(_) => f64::NAN,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; `None` for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}
