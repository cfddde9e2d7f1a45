//! Superoperators on column-stacked density matrices.
//!
//! Column stacking puts `rho[(i, j)]` at index `i + j d`, so that
//! `A rho B` maps to `(B^T kron A) stack(rho)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qstate::{check_dim, eigh, hermitian_part, max_abs, CMatrix, CVector, ComplexMatrix, C64};

/// A `d^2 x d^2` matrix acting on `stack(rho)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    matrix: ComplexMatrix,
    d: usize,
}

impl Superoperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        matrix.require_square()?;
        let n = matrix.dim_rows();
        let d = (n as f64).sqrt().round() as usize;
        if d * d != n {
            return Err(Error::InvalidArgument(format!(
                "superoperator dimension {n} is not a perfect square"
            )));
        }
        Ok(Self { matrix, d })
    }

    pub(crate) fn from_raw(m: CMatrix, d: usize) -> Self {
        debug_assert_eq!(m.nrows(), d * d);
        Self {
            matrix: ComplexMatrix::from_raw(m),
            d,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_raw(DMatrix::identity(d * d, d * d), d)
    }

    pub fn zeros(d: usize) -> Self {
        Self::from_raw(DMatrix::zeros(d * d, d * d), d)
    }

    /// `rho -> left rho right`.
    pub fn sandwich(left: &CMatrix, right: &CMatrix) -> Self {
        Self::from_raw(right.transpose().kronecker(left), left.nrows())
    }

    /// The hilbert-space dimension `d`.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        check_dim("superoperator application", self.d, rho.nrows())?;
        Ok(unstack(&(self.matrix.as_mat() * stack(rho)), self.d))
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_dim("superoperator composition", self.d, other.d)?;
        Ok(Self::from_raw(self.matrix.as_mat() * other.matrix.as_mat(), self.d))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim("superoperator sum", self.d, other.d)?;
        Ok(Self::from_raw(self.matrix.as_mat() + other.matrix.as_mat(), self.d))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_raw(self.matrix.as_mat() * C64::new(s, 0.0), self.d)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs(&(self.matrix.as_mat() - other.matrix.as_mat()))
    }

    /// Choi matrix `sum_{ij} |i><j| kron Phi(|i><j|)`.
    pub fn choi(&self) -> CMatrix {
        let d = self.d;
        let s = self.matrix.as_mat();
        DMatrix::from_fn(d * d, d * d, |row, col| {
            let (i, k) = (row / d, row % d);
            let (j, l) = (col / d, col % d);
            s[(k + l * d, i + j * d)]
        })
    }

    /// Smallest eigenvalue of the Hermitian part of the Choi matrix.
    pub fn choi_min_eigenvalue(&self) -> f64 {
        eigh(&hermitian_part(&self.choi())).0[0]
    }
}

pub fn stack(rho: &CMatrix) -> CVector {
    // nalgebra storage is column-major, which is exactly column stacking.
    DVector::from_column_slice(rho.as_slice())
}

pub fn unstack(v: &CVector, d: usize) -> CMatrix {
    DMatrix::from_column_slice(d, d, v.as_slice())
}
