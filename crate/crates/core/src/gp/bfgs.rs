//! Box-constrained quasi-Newton ascent with finite-difference gradients.

use nalgebra::{DMatrix, DVector};

fn clamp(x: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| v.clamp(lo[i], hi[i])))
}

/// Central differences, shortened to one side at a bound.
fn gradient(f: &dyn Fn(&[f64]) -> f64, x: &DVector<f64>, fx: f64, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        if lo[i] == hi[i] {
            continue;
        }
        let h = 1e-5 * x[i].abs().max(1.0);
        let up = (x[i] + h).min(hi[i]);
        let down = (x[i] - h).max(lo[i]);
        probe[i] = up;
        let fu = f(probe.as_slice());
        probe[i] = down;
        let fd = f(probe.as_slice());
        probe[i] = x[i];
        g[i] = match (fu.is_finite(), fd.is_finite()) {
            (true, true) => (fu - fd) / (up - down),
            (true, false) if up > x[i] => (fu - fx) / (up - x[i]),
            (false, true) if down < x[i] => (fx - fd) / (x[i] - down),
            _ => 0.0,
        };
    }
    g
}

/// Local maximum of `f` over the box `[lo, hi]` starting from `x0`.
///
/// `f` signals failure with a non-finite value; such points are never
/// accepted. The returned value is never below `f(x0)`.
pub(crate) fn maximize_in_box(
    f: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    x0: &[f64],
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut x = clamp(&DVector::from_column_slice(x0), lo, hi);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() || lo.iter().zip(hi).all(|(l, h)| l == h) {
        return (x.as_slice().to_vec(), fx);
    }
    let width = lo.iter().zip(hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    let mut g = gradient(f, &x, fx, lo, hi);
    let mut hinv = DMatrix::<f64>::identity(d, d);
    for _ in 0..max_iter {
        let blocked: Vec<bool> =
            (0..d).map(|i| lo[i] == hi[i] || (x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0)).collect();
        let mut pg = g.clone();
        for i in 0..d {
            if blocked[i] {
                pg[i] = 0.0;
            }
        }
        if pg.amax() < 1e-10 {
            break;
        }
        let mut dir = &hinv * &pg;
        for i in 0..d {
            if blocked[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&pg) <= 0.0 {
            hinv.fill_with_identity();
            dir = pg.clone();
        }
        let longest = dir.amax();
        let mut t = if longest > width { width / longest } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let xn = clamp(&(&x + &dir * t), lo, hi);
            let fnew = f(xn.as_slice());
            if fnew.is_finite() && fnew >= fx + 1e-4 * pg.dot(&(&xn - &x)) && fnew >= fx {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = gradient(f, &xn, fnew, lo, hi);
        let s = &xn - &x;
        let y = &g - &gn;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let left = &eye - (&s * y.transpose()) * rho;
            let right = &eye - (&y * s.transpose()) * rho;
            hinv = &left * &hinv * &right + (&s * s.transpose()) * rho;
        }
        let gain = fnew - fx;
        x = xn;
        fx = fnew;
        g = gn;
        if gain <= 1e-10 * (1.0 + fx.abs()) && s.amax() <= 1e-8 * width.max(1.0) {
            break;
        }
    }
    (x.as_slice().to_vec(), fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum() {
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - 4.0 * (x[1] + 0.5).powi(2) - x[0] * x[1];
        let (x, _) = maximize_in_box(&f, &[-5.0, -5.0], &[5.0, 5.0], &[3.0, 3.0], 200);
        // Stationary point of the quadratic.
        assert!((x[0] - 4.0 / 3.0).abs() < 1e-6 && (x[1] + 2.0 / 3.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| x[0] + x[1];
        let (x, fx) = maximize_in_box(&f, &[0.0, 0.0], &[1.0, 2.0], &[0.5, 0.5], 100);
        assert_eq!(x, vec![1.0, 2.0]);
        assert_eq!(fx, 3.0);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| (5.0 * x[0]).sin() * (3.0 * x[0]).cos();
        for s in 0..20 {
            let x0 = [s as f64 / 10.0 - 1.0];
            let (_, fx) = maximize_in_box(&f, &[-1.0], &[1.0], &x0, 100);
            assert!(fx >= f(&x0));
        }
    }
}
