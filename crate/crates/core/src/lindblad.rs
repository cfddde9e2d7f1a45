//! Markovian master equations in Lindblad form.
//!
//! ```text
//! L rho = -i[H, rho] + sum_i gamma_i (A_i rho A_i^dag - 1/2 {A_i^dag A_i, rho})
//! ```
//!
//! Internally the generator is kept as `L rho = G rho + rho G^dag + sum_i gamma_i A_i rho A_i^dag`
//! with `G = -iH - 1/2 sum_i gamma_i A_i^dag A_i`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ode::{check_grid, integrate_grid, Tolerances};
use crate::qstate::{
    check_dim, hermitian_part, validate_density_with, CMatrix, ComplexMatrix, DensityMatrix, HermitianOperator, C64,
    I,
};
use crate::superop::Superoperator;

/// Output tolerance for integrated density matrices.
pub const MASTER_OUTPUT_TOL: f64 = 1e-8;

/// One decay channel `(gamma, A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub gamma: f64,
    pub op: ComplexMatrix,
}

/// Coherent generator plus decay channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladModel {
    h: HermitianOperator,
    channels: Vec<Channel>,
    effective: CMatrix,
}

impl LindbladModel {
    pub fn new(h: HermitianOperator, channels: Vec<Channel>) -> Result<Self> {
        let d = h.dim();
        for (index, ch) in channels.iter().enumerate() {
            if !(ch.gamma >= 0.0) || !ch.gamma.is_finite() {
                return Err(Error::NegativeRate {
                    index,
                    gamma: ch.gamma,
                });
            }
            ch.op.require_square()?;
            check_dim("Lindblad channel operator", d, ch.op.dim_rows())?;
        }
        let mut effective = h.as_mat() * (-I);
        for ch in &channels {
            effective -= ch.op.adjoint().as_mat() * ch.op.as_mat() * C64::new(0.5 * ch.gamma, 0.0);
        }
        Ok(Self {
            h,
            channels,
            effective,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.h
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// `G = -iH - 1/2 sum_i gamma_i A_i^dag A_i`, the non-Hermitian generator of
    /// the no-jump evolution.
    pub fn effective_generator(&self) -> &CMatrix {
        &self.effective
    }

    pub(crate) fn apply_raw(&self, rho: &CMatrix) -> CMatrix {
        let g = &self.effective;
        let mut out = g * rho + rho * g.adjoint();
        for ch in &self.channels {
            if ch.gamma != 0.0 {
                out += ch.op.as_mat() * rho * ch.op.adjoint().as_mat() * C64::new(ch.gamma, 0.0);
            }
        }
        out
    }

    /// Matrix of `L` on column-stacked density matrices.
    pub fn superoperator(&self) -> Superoperator {
        let d = self.dim();
        let id = DMatrix::identity(d, d);
        let g = &self.effective;
        let mut l = id.kronecker(g) + g.conjugate().kronecker(&id);
        for ch in &self.channels {
            let a = ch.op.as_mat();
            l += a.conjugate().kronecker(a) * C64::new(ch.gamma, 0.0);
        }
        Superoperator::from_raw(l, d)
    }
}

/// `L rho` for the Lindblad generator.
pub fn lindblad_apply(model: &LindbladModel, rho: &DensityMatrix) -> Result<ComplexMatrix> {
    check_dim("lindblad_apply", model.dim(), rho.dim())?;
    ComplexMatrix::new(model.apply_raw(rho.as_mat()))
}

/// Solves `d rho/dt = L rho` on `t_grid` (which must start at 0).
///
/// Outputs are re-symmetrized to their Hermitian part at each grid point and
/// validated as density matrices to 1e-8.
pub fn integrate_master(model: &LindbladModel, rho0: &DensityMatrix, t_grid: &[f64]) -> Result<Vec<DensityMatrix>> {
    check_dim("integrate_master", model.dim(), rho0.dim())?;
    check_grid(t_grid)?;
    if t_grid[0] != 0.0 {
        return Err(Error::InvalidTime(format!("time grid must start at 0, got {}", t_grid[0])));
    }
    let d = model.dim();
    let rhs = |_t: f64, y: &[C64], dy: &mut [C64]| {
        let rho = DMatrix::from_column_slice(d, d, y);
        dy.copy_from_slice(model.apply_raw(&rho).as_slice());
    };
    let sol = integrate_grid(rhs, rho0.as_mat().as_slice().to_vec(), t_grid, Tolerances::default())?;
    let mut out = Vec::with_capacity(sol.len());
    out.push(rho0.clone());
    for (y, &t) in sol.iter().zip(t_grid).skip(1) {
        let rho = ComplexMatrix::new(hermitian_part(&DMatrix::from_column_slice(d, d, y)))?;
        validate_density_with(&rho, MASTER_OUTPUT_TOL).map_err(|e| Error::Integrator {
            t,
            step: 0.0,
            reason: format!("output left the state space: {e}"),
        })?;
        out.push(DensityMatrix::from_validated(rho));
    }
    Ok(out)
}

/// The dynamical map `V(t) = exp(L t)`.
pub fn dynamical_map(model: &LindbladModel, t: f64) -> Result<Superoperator> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidTime(format!("dynamical map needs t >= 0, got {t}")));
    }
    let l = model.superoperator();
    if t == 0.0 {
        return Ok(Superoperator::identity(model.dim()));
    }
    let v = (l.matrix().as_mat() * C64::new(t, 0.0)).exp();
    Ok(Superoperator::new(ComplexMatrix::new(v)?)?)
}

/// `max |V(t1) V(t2) - V(t1 + t2)|`.
pub fn semigroup_residual(model: &LindbladModel, t1: f64, t2: f64) -> Result<f64> {
    let lhs = dynamical_map(model, t1)?.compose(&dynamical_map(model, t2)?)?;
    let rhs = dynamical_map(model, t1 + t2)?;
    Ok(lhs.max_abs_diff(&rhs))
}
