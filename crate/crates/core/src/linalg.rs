//! Dense SVD shared by co-clustering and contrast analysis.
//!
//! Delegates to faer: nalgebra's SVD returns inaccurate factors for some
//! rank-deficient inputs, and column-centered contrast matrices are always
//! rank-deficient.

use faer::Mat;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Thin SVD `(U, s, V)` with `s` descending; `U` is r × k, `V` is c × k, k = min(r, c).
pub fn thin_svd(matrix: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (r, c) = matrix.shape();
    if r == 0 || c == 0 {
        return Ok((DMatrix::zeros(r, 0), Vec::new(), DMatrix::zeros(c, 0)));
    }
    let m = Mat::<f64>::from_fn(r, c, |i, j| matrix[(i, j)]);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Solver(format!("SVD of a {r} x {c} matrix failed: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let k = r.min(c);
    let s: Vec<f64> = (0..k).map(|t| s[t]).collect();
    Ok((
        DMatrix::from_fn(r, k, |i, t| u[(i, t)]),
        s,
        DMatrix::from_fn(c, k, |j, t| v[(j, t)]),
    ))
}
