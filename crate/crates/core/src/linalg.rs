//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular factor of a symmetric positive semi-definite matrix.
///
/// Pivots that fall below `rel_tol * max_diag` are treated as exact zeros and
/// their columns are zeroed, so degenerate (including all-zero) covariances
/// factor cleanly. A pivot below `-rel_tol * max_diag` is an error.
pub fn psd_cholesky(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::invalid("cholesky of a non-square matrix"));
    }
    let scale = (0..d).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -tol {
            return Err(Error::numerical("matrix is not positive semi-definite"));
        }
        if pivot <= tol {
            continue;
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// `(m + m') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Log-determinant and inverse-quadratic form helper for a positive-definite matrix.
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let chol = nalgebra::Cholesky::new(m.clone())?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..m.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            log_det += 2.0 * d.ln();
        }
        Some(Self { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `e' M^{-1} e`, evaluated through a triangular solve.
    pub fn quad_form(&self, e: &DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let mut z = e.clone();
        let d = z.len();
        for i in 0..d {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        z.norm_squared()
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Weighted sum of vectors with pairwise summation per component.
pub fn weighted_vector_sum(weights: &[f64], vs: &[DVector<f64>]) -> DVector<f64> {
    let d = vs.first().map_or(0, |v| v.len());
    let mut buf = vec![0.0; vs.len()];
    DVector::from_fn(d, |i, _| {
        for (k, (w, v)) in weights.iter().zip(vs).enumerate() {
            buf[k] = w * v[i];
        }
        pairwise_sum(&buf)
    })
}
