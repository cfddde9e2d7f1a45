//! Dense complex linear algebra and the validated state and operator types.
//!
//! Basis convention for two-level systems: the excited state `|e>` is the first
//! basis vector and the ground state `|g>` the second, so `sigma_z |e> = +|e>`
//! and `sigma_minus = |g><e|`.

use std::fmt;
use std::ops::{Add, Deref, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest Hilbert-space dimension any operator may reach.
pub const DEFAULT_DIM_CAP: usize = 4096;

pub const HERMITIAN_REL_TOL: f64 = 1e-12;
pub const DENSITY_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-10;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// A dense complex matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(CMatrix);

impl ComplexMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::InvalidArgument("matrix must have positive dimensions".into()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self(m))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "row-major entries",
                expected: rows * cols,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("ragged matrix rows".into()));
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| C64::new(rows[i][j], 0.0)))
    }

    pub(crate) fn from_raw(m: CMatrix) -> Self {
        debug_assert!(m.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        Self(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn dim_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim_cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.0.nrows() == self.0.ncols()
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.0.len());
        for i in 0..self.0.nrows() {
            for j in 0..self.0.ncols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs(&(&self.0 - &other.0))
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        max_abs(&(&self.0 - self.0.adjoint()))
    }

    /// Sum of singular values.
    pub fn trace_norm(&self) -> f64 {
        trace_norm(&self.0)
    }

    pub(crate) fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::NotSquare {
                rows: self.dim_rows(),
                cols: self.dim_cols(),
            })
        }
    }
}

impl Deref for ComplexMatrix {
    type Target = CMatrix;

    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix{}", self.0)
    }
}

macro_rules! impl_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr<&ComplexMatrix> for &ComplexMatrix {
            type Output = ComplexMatrix;

            fn $method(self, rhs: &ComplexMatrix) -> ComplexMatrix {
                ComplexMatrix(&self.0 $op &rhs.0)
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);

impl Mul<C64> for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: C64) -> ComplexMatrix {
        ComplexMatrix(&self.0 * rhs)
    }
}

impl Mul<f64> for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: f64) -> ComplexMatrix {
        ComplexMatrix(self.0.map(|z| z * rhs))
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-&self.0)
    }
}

/// A Hermitian operator: `max |M - M^dag| <= 1e-12 (1 + max |M|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator(ComplexMatrix);

impl HermitianOperator {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        m.require_square()?;
        let deviation = m.hermiticity_deviation();
        let tolerance = HERMITIAN_REL_TOL * (1.0 + m.max_abs());
        if deviation > tolerance {
            return Err(Error::NotHermitian {
                deviation,
                tolerance,
            });
        }
        Ok(Self(m))
    }

    pub(crate) fn from_raw(m: CMatrix) -> Self {
        Self(ComplexMatrix::from_raw(m))
    }

    pub fn zeros(d: usize) -> Self {
        Self(ComplexMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(ComplexMatrix::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.0.dim_rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    /// Eigenvalues (ascending) and the matching orthonormal eigenvectors as columns.
    pub fn eigh(&self) -> (Vec<f64>, CMatrix) {
        eigh(self.0.as_mat())
    }
}

impl Deref for HermitianOperator {
    type Target = ComplexMatrix;

    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// A pure state `psi` with unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(CVector);

impl StateVector {
    /// Wraps an amplitude vector that must already be normalized to 1e-10.
    pub fn new(amplitudes: CVector) -> Result<Self> {
        check_finite_vec(&amplitudes)?;
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self(amplitudes))
    }

    /// Rescales an arbitrary nonzero vector to unit norm.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        check_finite_vec(&amplitudes)?;
        let norm = amplitudes.norm();
        if norm <= 1e-300 {
            return Err(Error::ZeroVector);
        }
        Ok(Self(amplitudes.unscale(norm)))
    }

    pub fn from_slice(amplitudes: &[C64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(amplitudes))
    }

    pub(crate) fn from_raw(amplitudes: CVector) -> Self {
        Self(amplitudes)
    }

    /// Computational basis state `|k>` of a `d`-dimensional space.
    pub fn basis(d: usize, k: usize) -> Result<Self> {
        if k >= d {
            return Err(Error::InvalidArgument(format!("basis index {k} out of range for dimension {d}")));
        }
        let mut v = DVector::zeros(d);
        v[k] = ONE;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub fn into_amplitudes(self) -> CVector {
        self.0
    }

    pub fn projector(&self) -> CMatrix {
        &self.0 * self.0.adjoint()
    }

    pub fn expectation(&self, a: &ComplexMatrix) -> Result<C64> {
        check_dim("expectation", a.dim_rows(), self.dim())?;
        Ok(self.0.dotc(&(a.as_mat() * &self.0)))
    }
}

impl Deref for StateVector {
    type Target = CVector;

    fn deref(&self) -> &CVector {
        &self.0
    }
}

/// A density matrix: Hermitian, unit trace, positive semidefinite (all to 1e-10).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        validate_density(&m)?;
        Ok(Self(m))
    }

    /// Symmetrizes `(m + m^dag)/2` and then validates.
    pub fn from_symmetrized(m: &CMatrix) -> Result<Self> {
        Self::new(ComplexMatrix::new(hermitian_part(m))?)
    }

    /// Validates with a custom tolerance instead of the default 1e-10.
    pub fn with_tolerance(m: ComplexMatrix, tol: f64) -> Result<Self> {
        validate_density_with(&m, tol)?;
        Ok(Self(m))
    }

    pub(crate) fn from_validated(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn pure(psi: &StateVector) -> Self {
        Self(ComplexMatrix::from_raw(psi.projector()))
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self(ComplexMatrix::from_raw(DMatrix::identity(d, d) / C64::new(d as f64, 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.0.dim_rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn purity(&self) -> f64 {
        (self.0.as_mat() * self.0.as_mat()).trace().re
    }

    /// Population `<k|rho|k>`.
    pub fn population(&self, k: usize) -> f64 {
        self.0[(k, k)].re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh(self.0.as_mat()).0
    }
}

impl Deref for DensityMatrix {
    type Target = ComplexMatrix;

    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// The single validator behind every [`DensityMatrix`] post-condition.
pub fn validate_density(m: &ComplexMatrix) -> Result<()> {
    validate_density_with(m, DENSITY_TOL)
}

/// [`validate_density`] with a looser tolerance, for integrator outputs.
pub fn validate_density_with(m: &ComplexMatrix, tol: f64) -> Result<()> {
    m.require_square()?;
    let deviation = m.hermiticity_deviation();
    if deviation > tol {
        return Err(Error::NotHermitian {
            deviation,
            tolerance: tol,
        });
    }
    let trace = m.trace();
    if (trace.re - 1.0).abs() > tol || trace.im.abs() > tol {
        return Err(Error::TraceNotUnit { trace: trace.re });
    }
    let min_eigenvalue = eigh(&hermitian_part(m.as_mat())).0[0];
    if min_eigenvalue < -tol {
        return Err(Error::NotPositive { min_eigenvalue });
    }
    Ok(())
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

fn check_finite_vec(v: &CVector) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("state vector must be non-empty".into()));
    }
    if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("state vector"));
    }
    Ok(())
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub(crate) fn trace_norm(m: &CMatrix) -> f64 {
    if m.is_square() && max_abs(&(m - m.adjoint())) <= 1e-14 * (1.0 + max_abs(m)) {
        return eigh(m).0.iter().map(|x| x.abs()).sum();
    }
    m.clone().svd(false, false).singular_values.iter().sum()
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
pub(crate) fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Kronecker product with the default dimension cap.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    kron_with_cap(a, b, DEFAULT_DIM_CAP)
}

pub fn kron_with_cap(a: &ComplexMatrix, b: &ComplexMatrix, cap: usize) -> Result<ComplexMatrix> {
    let rows = a.dim_rows().checked_mul(b.dim_rows());
    let cols = a.dim_cols().checked_mul(b.dim_cols());
    match (rows, cols) {
        (Some(r), Some(c)) if r <= cap && c <= cap => Ok(ComplexMatrix(a.as_mat().kronecker(b.as_mat()))),
        (r, c) => Err(Error::DimensionCap {
            dim: r.unwrap_or(usize::MAX).max(c.unwrap_or(usize::MAX)),
            cap,
        }),
    }
}

/// Reduced state `(rho_S)_{ij} = sum_k rho_{(i,k),(j,k)}` of a product space S x B.
pub fn partial_trace_env(rho_total: &DensityMatrix, d_s: usize, d_b: usize) -> Result<DensityMatrix> {
    let reduced = partial_trace_env_raw(rho_total.as_mat(), d_s, d_b)?;
    DensityMatrix::new(ComplexMatrix::from_raw(reduced))
}

pub(crate) fn partial_trace_env_raw(rho: &CMatrix, d_s: usize, d_b: usize) -> Result<CMatrix> {
    check_dim("partial trace", d_s * d_b, rho.nrows())?;
    check_dim("partial trace", d_s * d_b, rho.ncols())?;
    Ok(DMatrix::from_fn(d_s, d_s, |i, j| {
        (0..d_b).map(|k| rho[(i * d_b + k, j * d_b + k)]).sum()
    }))
}

/// `Re tr(A rho)`. The imaginary part is only a consistency diagnostic.
pub fn expectation(a: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    Ok(expectation_complex(a, rho.matrix())?.re)
}

/// `tr(A rho)` for an arbitrary (possibly non-Hermitian) operator or state.
pub fn expectation_complex(a: &ComplexMatrix, rho: &ComplexMatrix) -> Result<C64> {
    check_dim("expectation", a.dim_cols(), rho.dim_rows())?;
    check_dim("expectation", a.dim_rows(), rho.dim_cols())?;
    let (n, m) = (a.dim_rows(), a.dim_cols());
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..m {
            acc += a[(i, k)] * rho[(k, i)];
        }
    }
    Ok(acc)
}

/// `exp(scale * A)`.
///
/// Hermitian and anti-Hermitian inputs go through an eigendecomposition, which
/// keeps unitary propagators unitary to rounding. Everything else uses
/// scaling and squaring with a Padé approximant.
pub fn matrix_exponential(a: &ComplexMatrix, scale: C64) -> Result<ComplexMatrix> {
    a.require_square()?;
    let m = a.as_mat();
    let tol = 1e-13 * (1.0 + max_abs(m));
    if max_abs(&(m - m.adjoint())) <= tol {
        return Ok(ComplexMatrix::new(exp_hermitian(m, scale))?);
    }
    if max_abs(&(m + m.adjoint())) <= tol {
        // A = i K with K Hermitian.
        let k = m * (-I);
        return Ok(ComplexMatrix::new(exp_hermitian(&k, scale * I))?);
    }
    ComplexMatrix::new((m * scale).exp())
}

/// `exp(s K)` for Hermitian `K` via `V diag(exp(s lambda)) V^dag`.
pub(crate) fn exp_hermitian(k: &CMatrix, s: C64) -> CMatrix {
    let (values, vectors) = eigh(k);
    spectral_function(&values, &vectors, |lambda| (s * lambda).exp())
}

pub(crate) fn spectral_function(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> C64) -> CMatrix {
    let n = values.len();
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let fj = f(lambda);
        for i in 0..n {
            scaled[(i, j)] *= fj;
        }
    }
    scaled * vectors.adjoint()
}

/// `rho = sum_a w_a |psi_a><psi_a|`.
pub fn density_from_mixture(weights: &[f64], states: &[StateVector]) -> Result<DensityMatrix> {
    if weights.len() != states.len() {
        return Err(Error::DimensionMismatch {
            context: "mixture weights vs states",
            expected: weights.len(),
            found: states.len(),
        });
    }
    let d = states.first().ok_or(Error::EmptyEnsemble)?.dim();
    for (index, &weight) in weights.iter().enumerate() {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::NegativeWeight { index, weight });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::WeightSum { sum });
    }
    let mut rho = DMatrix::zeros(d, d);
    for (w, psi) in weights.iter().zip(states) {
        check_dim("mixture state", d, psi.dim())?;
        rho += psi.projector() * C64::new(*w, 0.0);
    }
    DensityMatrix::new(ComplexMatrix::from_raw(rho))
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Named operator builders.
pub mod ops {
    use super::*;

    fn real(rows: &[&[f64]]) -> ComplexMatrix {
        ComplexMatrix::from_real_rows(rows).expect("static operator literal")
    }

    pub fn pauli_x() -> ComplexMatrix {
        real(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    pub fn pauli_y() -> ComplexMatrix {
        ComplexMatrix::from_raw(DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]))
    }

    pub fn pauli_z() -> ComplexMatrix {
        real(&[&[1.0, 0.0], &[0.0, -1.0]])
    }

    /// `|g><e|`.
    pub fn sigma_minus() -> ComplexMatrix {
        real(&[&[0.0, 0.0], &[1.0, 0.0]])
    }

    /// `|e><g|`.
    pub fn sigma_plus() -> ComplexMatrix {
        real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }

    pub fn identity(d: usize) -> ComplexMatrix {
        ComplexMatrix::identity(d)
    }

    /// Truncated ladder operator with `<n-1|a|n> = sqrt(n)`.
    pub fn annihilation(d: usize) -> ComplexMatrix {
        let mut m = DMatrix::zeros(d, d);
        for n in 1..d {
            m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
        }
        ComplexMatrix::from_raw(m)
    }

    pub fn creation(d: usize) -> ComplexMatrix {
        annihilation(d).adjoint()
    }

    pub fn number(d: usize) -> ComplexMatrix {
        ComplexMatrix::from_raw(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(i as f64, 0.0)
            } else {
                ZERO
            }
        }))
    }

    /// `|k><k|` in dimension `d`.
    pub fn projector(d: usize, k: usize) -> ComplexMatrix {
        let mut m = DMatrix::zeros(d, d);
        if k < d {
            m[(k, k)] = ONE;
        }
        ComplexMatrix::from_raw(m)
    }

    /// `|j><k|` in dimension `d`.
    pub fn transition(d: usize, j: usize, k: usize) -> ComplexMatrix {
        let mut m = DMatrix::zeros(d, d);
        if j < d && k < d {
            m[(j, k)] = ONE;
        }
        ComplexMatrix::from_raw(m)
    }
}
