use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CopoError, Result};

/// Cholesky factor of a regularized metric `Σ + λI`, used for the
/// `‖v‖_{(Σ+λI)^{-1}}` norms without forming an explicit inverse.
#[derive(Debug, Clone)]
pub struct SpdMetric {
    chol: Cholesky<f64, Dyn>,
}

impl SpdMetric {
    pub fn new(sigma: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let n = sigma.nrows();
        if sigma.ncols() != n {
            return Err(CopoError::DimensionMismatch {
                expected: n,
                got: sigma.ncols(),
            });
        }
        let a = sigma + DMatrix::identity(n, n) * lambda;
        Self::from_matrix(a)
    }

    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        let chol = a.cholesky().ok_or(CopoError::NotPositiveDefinite)?;
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `vᵀ A^{-1} v`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.solve(v)).max(0.0)
    }

    /// `‖v‖_{A^{-1}}`.
    pub fn inv_norm(&self, v: &DVector<f64>) -> f64 {
        self.inv_quad(v).sqrt()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// `‖v‖_A = sqrt(vᵀ A v)` for a symmetric PSD `A`.
pub fn quad_norm(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v)).max(0.0).sqrt()
}
