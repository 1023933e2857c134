//! Local polynomial models, the trust-region subproblem and the tests
//! shared by RSM and STRONG.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sim::ReplicationSet;
use crate::stats::{f_sf, mean, sample_variance, student_t_sf};

/// `b0 + gᵀu + ½uᵀHu` in coded coordinates `u = (x − center)/scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalModel {
    pub center: Vec<f64>,
    pub scale: f64,
    pub b0: f64,
    pub g: DVector<f64>,
    /// Zero for a first-order model.
    pub h: DMatrix<f64>,
    pub order: u8,
    /// Residual sum of squares over all replications and its degrees of
    /// freedom, plus the pure-error part.
    pub ss_res: f64,
    pub ss_pure: f64,
    pub df_pure: usize,
    pub distinct: usize,
    pub params: usize,
}

fn coded(x: &[f64], center: &[f64], scale: f64) -> Vec<f64> {
    x.iter().zip(center).map(|(a, c)| (a - c) / scale).collect()
}

fn feature_row(u: &[f64], order: u8) -> Vec<f64> {
    let mut row = vec![1.0];
    row.extend_from_slice(u);
    if order == 2 {
        for j in 0..u.len() {
            for k in j..u.len() {
                row.push(if j == k { 0.5 * u[j] * u[j] } else { u[j] * u[k] });
            }
        }
    }
    row
}

impl LocalModel {
    /// Least squares on every replication at every design point.
    pub fn fit(sets: &[ReplicationSet], center: &[f64], scale: f64, order: u8) -> Result<Self> {
        let d = center.len();
        let p = if order == 2 { 1 + d + d * (d + 1) / 2 } else { 1 + d };
        let n: usize = sets.iter().map(|s| s.reps()).sum();
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        let mut row = 0;
        let mut ss_pure = 0.0;
        let mut df_pure = 0;
        for s in sets {
            let f = feature_row(&coded(&s.point, center, scale), order);
            for out in &s.outputs {
                x.row_mut(row).copy_from_slice(&f);
                y[row] = *out;
                row += 1;
            }
            if let Some(v) = sample_variance(&s.outputs) {
                ss_pure += v * (s.reps() - 1) as f64;
                df_pure += s.reps() - 1;
            }
        }
        let svd = x.clone().svd(true, true);
        let rank = svd.rank(1e-10 * svd.singular_values.max());
        if rank < p {
            return Err(Error::RankDeficient { rank, columns: p });
        }
        let beta = svd.solve(&y, 1e-12).map_err(|e| Error::Singular(e.to_string()))?;
        let ss_res = (&y - &x * &beta).norm_squared();
        let g = DVector::from_iterator(d, (1..=d).map(|j| beta[j]));
        let mut h = DMatrix::zeros(d, d);
        if order == 2 {
            let mut k = 1 + d;
            for a in 0..d {
                for b in a..d {
                    h[(a, b)] = beta[k];
                    h[(b, a)] = beta[k];
                    k += 1;
                }
            }
        }
        Ok(Self {
            center: center.to_vec(),
            scale,
            b0: beta[0],
            g,
            h,
            order,
            ss_res,
            ss_pure,
            df_pure,
            distinct: sets.len(),
            params: p,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let u = DVector::from_vec(coded(x, &self.center, self.scale));
        self.b0 + self.g.dot(&u) + 0.5 * u.dot(&(&self.h * &u))
    }

    /// Gradient in natural units at the centre.
    pub fn gradient(&self) -> Vec<f64> {
        self.g.iter().map(|v| v / self.scale).collect()
    }

    /// Pooled within-point variance of one replication; zero when no point
    /// was replicated.
    pub fn pure_error_variance(&self) -> f64 {
        if self.df_pure == 0 {
            0.0
        } else {
            self.ss_pure / self.df_pure as f64
        }
    }

    /// Lack-of-fit p-value: lack-of-fit mean square over pure-error mean
    /// square. With no pure error the test is decided by whether any
    /// lack of fit is present at all.
    pub fn lack_of_fit_pvalue(&self) -> f64 {
        let ss_lof = (self.ss_res - self.ss_pure).max(0.0);
        let df_lof = self.distinct.saturating_sub(self.params);
        let tiny = 1e-12 * (1.0 + self.b0.abs()).powi(2);
        if df_lof == 0 {
            return 1.0;
        }
        if self.df_pure == 0 || self.ss_pure <= tiny {
            return if ss_lof <= tiny { 1.0 } else { 0.0 };
        }
        f_sf((ss_lof / df_lof as f64) / (self.ss_pure / self.df_pure as f64), df_lof as f64, self.df_pure as f64)
    }
}

/// Maximize `gᵀs + ½sᵀHs` over `‖s‖ ≤ radius`.
pub fn trust_region_step(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    let d = g.len();
    if radius <= 0.0 || d == 0 {
        return DVector::zeros(d);
    }
    // Minimize −gᵀs + ½sᵀBs with B = −H: (B + λI)s = g.
    let eig = SymmetricEigen::new(-h);
    let q = &eig.eigenvectors;
    let b = &eig.eigenvalues;
    let gt = q.tr_mul(g);
    let step = |lambda: f64| DVector::from_iterator(d, (0..d).map(|i| if b[i] + lambda > 0.0 { gt[i] / (b[i] + lambda) } else { 0.0 }));
    let bmin = b.min();
    if bmin > 0.0 {
        let s = step(0.0);
        if s.norm() <= radius {
            return q * s;
        }
    }
    let lo0 = (-bmin).max(0.0);
    let scale = g.norm().max(1e-300);
    // Hard case: the step at the smallest admissible shift stays inside.
    let small = step(lo0 + 1e-14 * (1.0 + lo0));
    if small.norm() < radius {
        let i = (0..d).min_by(|&a, &b2| b[a].total_cmp(&b[b2])).expect("d > 0");
        let mut s = small;
        let extra = (radius * radius - s.norm_squared()).max(0.0).sqrt();
        s[i] += if gt[i] >= 0.0 { extra } else { -extra };
        return q * s;
    }
    let mut lo = lo0;
    let mut hi = lo0 + scale / radius + b.amax() + 1.0;
    while step(hi).norm() > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    q * step(hi)
}

/// One-sided Welch test of `E[cand] > E[base]`; true when significant at
/// level `alpha`. With both variances zero the sign of the mean difference
/// decides.
pub fn improvement_test(base: &[f64], cand: &[f64], alpha: f64) -> bool {
    let diff = mean(cand) - mean(base);
    let vb = sample_variance(base).unwrap_or(0.0) / base.len() as f64;
    let vc = sample_variance(cand).unwrap_or(0.0) / cand.len() as f64;
    let se2 = vb + vc;
    if se2 <= 1e-300 {
        return diff > 0.0;
    }
    let dof_b = (base.len() as f64 - 1.0).max(1.0);
    let dof_c = (cand.len() as f64 - 1.0).max(1.0);
    let dof = se2 * se2 / (vb * vb / dof_b + vc * vc / dof_c).max(1e-300);
    student_t_sf(diff / se2.sqrt(), dof.max(1.0)) < alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::DesignPoint;
    use proptest::prelude::*;

    fn set(x: Vec<f64>, ys: Vec<f64>) -> ReplicationSet {
        ReplicationSet::new(DesignPoint::new(x).unwrap(), ys, None).unwrap()
    }

    #[test]
    fn quadratic_fit_is_exact_on_a_quadratic() {
        let f = |x: &[f64]| 3.0 + x[0] - 2.0 * x[1] - x[0] * x[0] + 0.5 * x[0] * x[1] - 0.7 * x[1] * x[1];
        let pts = super::super::design::central_composite(2, 1.4);
        let mut sets: Vec<ReplicationSet> = pts.iter().map(|p| {
            let x = vec![0.2 + 0.3 * p[0], -0.1 + 0.3 * p[1]];
            set(x.clone(), vec![f(&x)])
        }).collect();
        sets.push(set(vec![0.2, -0.1], vec![f(&[0.2, -0.1])]));
        let m = LocalModel::fit(&sets, &[0.2, -0.1], 0.3, 2).unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [0.4, 0.3]] {
            assert!((m.predict(&x) - f(&x)).abs() < 1e-9);
        }
        assert!(m.lack_of_fit_pvalue() == 1.0);
    }

    #[test]
    fn curvature_is_lack_of_fit_for_a_plane() {
        let sets: Vec<ReplicationSet> = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0], [0.0, 0.0]]
            .iter()
            .map(|x| set(x.to_vec(), vec![-(x[0] * x[0] + x[1] * x[1]); 3]))
            .collect();
        let m = LocalModel::fit(&sets, &[0.0, 0.0], 1.0, 1).unwrap();
        assert_eq!(m.lack_of_fit_pvalue(), 0.0);
        let flat: Vec<ReplicationSet> = sets.iter().map(|s| set(s.point.to_vec(), vec![2.0; 3])).collect();
        assert_eq!(LocalModel::fit(&flat, &[0.0, 0.0], 1.0, 1).unwrap().lack_of_fit_pvalue(), 1.0);
    }

    #[test]
    fn interior_newton_step() {
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -1.0]);
        let s = trust_region_step(&g, &h, 10.0);
        assert!((s[0] - 0.5).abs() < 1e-14 && s[1].abs() < 1e-14);
    }

    #[test]
    fn linear_model_steps_to_the_boundary() {
        let g = DVector::from_vec(vec![3.0, 4.0]);
        let s = trust_region_step(&g, &DMatrix::zeros(2, 2), 2.0);
        assert!((s[0] - 1.2).abs() < 1e-9 && (s[1] - 1.6).abs() < 1e-9);
    }

    #[test]
    fn hard_case_uses_the_curvature_direction() {
        let g = DVector::from_vec(vec![0.0, 0.0]);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let s = trust_region_step(&g, &h, 1.0);
        assert!((s.norm() - 1.0).abs() < 1e-9);
        assert!(s[0].abs() > 0.99);
    }

    proptest! {
        #[test]
        fn subproblem_beats_random_feasible_steps(
            gv in prop::collection::vec(-2.0..2.0f64, 3),
            hv in prop::collection::vec(-2.0..2.0f64, 6),
            radius in 0.1..3.0f64,
            probe in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            let g = DVector::from_vec(gv);
            let mut h = DMatrix::zeros(3, 3);
            let mut k = 0;
            for a in 0..3 { for b in a..3 { h[(a, b)] = hv[k]; h[(b, a)] = hv[k]; k += 1; } }
            let q = |s: &DVector<f64>| g.dot(s) + 0.5 * s.dot(&(&h * s));
            let s = trust_region_step(&g, &h, radius);
            prop_assert!(s.norm() <= radius * (1.0 + 1e-9));
            let p = DVector::from_vec(probe);
            let p = if p.norm() > 0.0 { &p * (radius / p.norm().max(1.0)) } else { p };
            prop_assert!(q(&s) >= q(&p) - 1e-7);
        }
    }

    #[test]
    fn welch_test_cases() {
        assert!(improvement_test(&[1.0, 1.0], &[2.0, 2.0], 0.05));
        assert!(!improvement_test(&[2.0, 2.0], &[1.0, 1.0], 0.05));
        assert!(!improvement_test(&[1.0, 1.0], &[1.0, 1.0], 0.05));
        assert!(!improvement_test(&[0.0, 1.0, 0.5], &[0.1, 1.1, 0.6], 0.05));
        assert!(improvement_test(&[0.0, 0.1, 0.05, 0.02], &[1.0, 1.1, 1.05, 1.02], 0.05));
    }
}
