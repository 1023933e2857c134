use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;

/// `(UCV + Σ)⁻¹b` as `Σ⁻¹b − Σ⁻¹U(C⁻¹ + VΣ⁻¹U)⁻¹VΣ⁻¹b`, factorizing only
/// `m × m` matrices.
pub fn woodbury_solve(
    sigma_diag: &DVector<f64>,
    u: &DMatrix<f64>,
    c: &DMatrix<f64>,
    v: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = sigma_diag.len();
    let m = c.nrows();
    if u.shape() != (n, m) || v.shape() != (m, n) || c.ncols() != m || b.len() != n {
        return Err(Error::Dimension { expected: n, got: b.len() });
    }
    if sigma_diag.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("Σ must have positive diagonal entries".into()));
    }
    let sinv_b = b.component_div(sigma_diag);
    if m == 0 {
        return Ok(sinv_b);
    }
    let c_inv = c.clone().try_inverse().ok_or_else(|| Error::Singular("C is not invertible".into()))?;
    let mut sinv_u = u.clone();
    for (i, s) in sigma_diag.iter().enumerate() {
        sinv_u.row_mut(i).scale_mut(1.0 / s);
    }
    let inner = c_inv + v * &sinv_u;
    let t = lu_solve(&inner, &(v * &sinv_b))?;
    Ok(sinv_b - sinv_u * t)
}
