//! Dense linear-algebra helpers shared by the surrogates, the GP posterior and
//! the low-rank approximations.
//!
//! Symmetric positive-definite systems go through [`SpdFactor`], a Cholesky
//! factor with an escalating diagonal jitter: the first attempt is unjittered,
//! then the jitter starts at `1e-10 · trace / n` and doubles at most
//! [`MAX_JITTER_DOUBLINGS`] times before giving up.
//!
//! Two thread-local counters support instrumentation in tests: the number of
//! factorizations performed, and the largest matrix allocated through
//! [`tracked_zeros`].

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const MAX_JITTER_DOUBLINGS: usize = 10;
const JITTER_SCALE: f64 = 1e-10;

thread_local! {
    static FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
    static LARGEST_ALLOCATION: Cell<usize> = const { Cell::new(0) };
}

/// Number of SPD factorizations started on the current thread.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.with(|c| c.get())
}

/// Largest element count requested through [`tracked_zeros`] on this thread
/// since the last [`reset_allocation_tracking`].
pub fn largest_tracked_allocation() -> usize {
    LARGEST_ALLOCATION.with(|c| c.get())
}

pub fn reset_allocation_tracking() {
    LARGEST_ALLOCATION.with(|c| c.set(0));
}

fn record_allocation(len: usize) {
    LARGEST_ALLOCATION.with(|c| c.set(c.get().max(len)));
}

/// Zero matrix whose size is recorded for the allocation high-water mark.
pub fn tracked_zeros(rows: usize, cols: usize) -> DMatrix<f64> {
    record_allocation(rows * cols);
    DMatrix::zeros(rows, cols)
}

/// Cholesky factor of `A + jitter·I`.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factor a symmetric matrix, escalating the diagonal jitter on failure.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        FACTORIZATIONS.with(|c| c.set(c.get() + 1));
        record_allocation(a.len());
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Dimension { expected: n, got: a.ncols() });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        if let Some(chol) = a.clone().cholesky() {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let trace = a.trace().abs();
        let base = if n > 0 && trace > 0.0 { JITTER_SCALE * trace / n as f64 } else { JITTER_SCALE };
        let mut jitter = base;
        for _ in 0..=MAX_JITTER_DOUBLINGS {
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += jitter;
            }
            if let Some(chol) = b.cholesky() {
                return Ok(Self { chol, jitter });
            }
            jitter *= 2.0;
        }
        Err(Error::Factorization { attempts: MAX_JITTER_DOUBLINGS })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter that was added to make the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`, so that `bᵀ A⁻¹ c = (L⁻¹b)ᵀ (L⁻¹c)`.
    pub fn half_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn half_solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    /// `ln |A + jitter·I|`.
    pub fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Solve a general square system by LU, reporting singularity.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("LU solve failed".into()))
}

/// Numerical rank from singular values with the usual `max(m,n)·ε·σ_max` cutoff.
pub fn numerical_rank(singular_values: &DVector<f64>, rows: usize, cols: usize) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    singular_values.iter().filter(|&&s| s > tol).count()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}
