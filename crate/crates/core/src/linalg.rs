//! Dense symmetric helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative threshold below which an eigenvalue counts as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// `RANK_RTOL * max(1, lambda_max)`.
pub fn rank_tolerance(lambda_max: f64) -> f64 {
    RANK_RTOL * lambda_max.max(1.0)
}

/// Eigen-decomposition of a symmetric positive semi-definite matrix.
#[derive(Debug, Clone)]
pub struct SymSpectrum {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    tol: f64,
}

impl SymSpectrum {
    pub fn new(matrix: &DMatrix<f64>) -> Self {
        if matrix.nrows() == 0 {
            return Self { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0), tol: RANK_RTOL };
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let max = eig.eigenvalues.max();
        Self { tol: rank_tolerance(max), values: eig.eigenvalues, vectors: eig.eigenvectors }
    }

    pub fn min(&self) -> f64 {
        if self.values.is_empty() { 0.0 } else { self.values.min() }
    }

    pub fn max(&self) -> f64 {
        if self.values.is_empty() { 0.0 } else { self.values.max() }
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn is_singular(&self) -> bool {
        self.values.is_empty() || self.min() <= self.tol
    }

    pub fn rank(&self) -> usize {
        self.values.iter().filter(|&&v| v > self.tol).count()
    }

    /// Moore-Penrose pseudo-inverse applied to `b`.
    pub fn pinv_apply(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(b.len());
        for (k, &lambda) in self.values.iter().enumerate() {
            if lambda > self.tol {
                let v = self.vectors.column(k);
                out.axpy(v.dot(b) / lambda, &v, 1.0);
            }
        }
        out
    }

    /// Orthonormal basis of the numerical null space, one column per vector.
    pub fn null_basis(&self) -> DMatrix<f64> {
        let cols: Vec<_> = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= self.tol)
            .map(|(k, _)| self.vectors.column(k).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(self.values.len(), 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}
