//! Experimental designs in coded units.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::sim::Bounds;

/// Latin hypercube of `n` points in the unit cube `[0, 1]^d`.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[j] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Latin hypercube mapped into `bounds`.
pub fn latin_hypercube_in<R: Rng + ?Sized>(n: usize, bounds: &Bounds, rng: &mut R) -> Vec<Vec<f64>> {
    latin_hypercube(n, bounds.dim(), rng).iter().map(|u| bounds.from_unit(u)).collect()
}

/// Full `2^k` factorial in `±1` coding, first factor varying slowest.
pub fn full_factorial(k: usize) -> Vec<Vec<f64>> {
    (0..1usize << k)
        .map(|run| (0..k).map(|j| if run >> (k - 1 - j) & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

/// Two-level design for a first-order model: `2^k` runs with the smallest `k`
/// such that `2^k ≥ d + 1`. Extra factors are aliased with interactions of
/// the base factors (lowest order first), giving resolution III or better.
pub fn fractional_factorial(d: usize) -> Vec<Vec<f64>> {
    let mut k = 0;
    while (1usize << k) < d + 1 {
        k += 1;
    }
    let k = k.min(d);
    let base = full_factorial(k);
    let mut generators: Vec<Vec<usize>> = Vec::new();
    for order in 2..=k {
        for mask in 0..1usize << k {
            if mask.count_ones() as usize == order {
                generators.push((0..k).filter(|j| mask >> j & 1 == 1).collect());
            }
        }
    }
    base.into_iter()
        .map(|mut run| {
            for g in generators.iter().take(d - k) {
                let v = g.iter().map(|&j| run[j]).product();
                run.push(v);
            }
            run
        })
        .collect()
}

/// Central composite design without centre runs: a resolution-V two-level
/// part (full for `d ≤ 4`, half fraction `x_d = x_1⋯x_{d−1}` above) and
/// `2d` axial runs at distance `alpha`.
pub fn central_composite(d: usize, alpha: f64) -> Vec<Vec<f64>> {
    let mut runs = if d <= 4 {
        full_factorial(d)
    } else {
        full_factorial(d - 1)
            .into_iter()
            .map(|mut r| {
                r.push(r.iter().product());
                r
            })
            .collect()
    };
    for j in 0..d {
        for s in [-alpha, alpha] {
            let mut r = vec![0.0; d];
            r[j] = s;
            runs.push(r);
        }
    }
    runs
}

/// Map coded runs to `center + scale · run`, projected into `bounds`.
pub fn scale_design(runs: &[Vec<f64>], center: &[f64], scale: f64, bounds: &Bounds) -> Vec<Vec<f64>> {
    runs.iter()
        .map(|r| bounds.project(&r.iter().zip(center).map(|(u, c)| c + scale * u).collect::<Vec<_>>()))
        .collect()
}
