//! Exact unitary evolution of system plus environment, reduced to the system.
//!
//! Serves as the ground truth the approximate descriptions are checked against.

use crate::error::{Error, Result};
use crate::qstate::{
    check_dim, commutator, eigh, hermitian_part, kron_with_cap, ops, partial_trace_env_raw, spectral_function,
    validate_density, CMatrix, ComplexMatrix, DensityMatrix, HermitianOperator, StateVector, C64, DEFAULT_DIM_CAP,
    I,
};

/// `H = H_S kron I_B + I_S kron H_B + alpha H_I` with environment state `rho_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalSystemModel {
    pub h_s: HermitianOperator,
    pub h_b: HermitianOperator,
    pub h_i: HermitianOperator,
    pub alpha: f64,
    pub rho_b: DensityMatrix,
}

impl TotalSystemModel {
    pub fn new(
        h_s: HermitianOperator,
        h_b: HermitianOperator,
        h_i: HermitianOperator,
        alpha: f64,
        rho_b: DensityMatrix,
    ) -> Result<Self> {
        Self::with_cap(h_s, h_b, h_i, alpha, rho_b, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(
        h_s: HermitianOperator,
        h_b: HermitianOperator,
        h_i: HermitianOperator,
        alpha: f64,
        rho_b: DensityMatrix,
        cap: usize,
    ) -> Result<Self> {
        let total = h_s.dim() * h_b.dim();
        if total > cap {
            return Err(Error::DimensionCap { dim: total, cap });
        }
        check_dim("interaction Hamiltonian", total, h_i.dim())?;
        check_dim("environment state", h_b.dim(), rho_b.dim())?;
        if !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("coupling alpha must be finite, got {alpha}")));
        }
        Ok(Self {
            h_s,
            h_b,
            h_i,
            alpha,
            rho_b,
        })
    }

    pub fn d_s(&self) -> usize {
        self.h_s.dim()
    }

    pub fn d_b(&self) -> usize {
        self.h_b.dim()
    }
}

pub fn build_total_hamiltonian(model: &TotalSystemModel) -> Result<HermitianOperator> {
    let cap = DEFAULT_DIM_CAP;
    let id_s = ComplexMatrix::identity(model.d_s());
    let id_b = ComplexMatrix::identity(model.d_b());
    let h = &(&kron_with_cap(&model.h_s, &id_b, cap)? + &kron_with_cap(&id_s, &model.h_b, cap)?)
        + &(model.h_i.matrix() * model.alpha);
    // Sum of Hermitian terms; drop rounding asymmetry.
    Ok(HermitianOperator::from_raw(hermitian_part(h.as_mat())))
}

/// Diagonalizes the total Hamiltonian once and propagates to arbitrary times.
#[derive(Debug, Clone)]
pub struct ExactPropagator {
    energies: Vec<f64>,
    eigenvectors: CMatrix,
    d_s: usize,
    d_b: usize,
    rho_b: CMatrix,
}

impl ExactPropagator {
    pub fn new(model: &TotalSystemModel) -> Result<Self> {
        let h = build_total_hamiltonian(model)?;
        let (energies, eigenvectors) = eigh(h.as_mat());
        Ok(Self {
            energies,
            eigenvectors,
            d_s: model.d_s(),
            d_b: model.d_b(),
            rho_b: model.rho_b.as_mat().clone(),
        })
    }

    /// `U(t) = exp(-iHt)`.
    pub fn unitary(&self, t: f64) -> Result<ComplexMatrix> {
        check_time(t)?;
        Ok(ComplexMatrix::from_raw(spectral_function(&self.energies, &self.eigenvectors, |e| {
            C64::new(0.0, -e * t).exp()
        })))
    }

    /// `U rho U^dag` for a total-system state.
    pub fn evolve_total(&self, rho_total: &CMatrix, t: f64) -> Result<CMatrix> {
        check_dim("total state", self.d_s * self.d_b, rho_total.nrows())?;
        let u = self.unitary(t)?;
        Ok(u.as_mat() * rho_total * u.adjoint().as_mat())
    }

    pub fn initial_total_state(&self, rho_s0: &DensityMatrix) -> Result<CMatrix> {
        check_dim("initial system state", self.d_s, rho_s0.dim())?;
        Ok(rho_s0.as_mat().kronecker(&self.rho_b))
    }

    /// `rho_S(t) = tr_B { U (rho_S(0) kron rho_B) U^dag }`.
    pub fn reduced(&self, rho_s0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
        let total = self.evolve_total(&self.initial_total_state(rho_s0)?, t)?;
        let reduced = ComplexMatrix::new(hermitian_part(&partial_trace_env_raw(&total, self.d_s, self.d_b)?))?;
        validate_density(&reduced).map_err(|e| Error::Integrator {
            t,
            step: 0.0,
            reason: format!("exact reduced state invalid: {e}"),
        })?;
        DensityMatrix::new(reduced)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTime(format!("time must be finite, got {t}")))
    }
}

pub fn evolve_reduced_exact(model: &TotalSystemModel, rho_s0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    check_time(t)?;
    ExactPropagator::new(model)?.reduced(rho_s0, t)
}

/// `-i [H, rho]`.
pub fn von_neumann_rhs(h: &HermitianOperator, rho: &DensityMatrix) -> Result<ComplexMatrix> {
    check_dim("von_neumann_rhs", h.dim(), rho.dim())?;
    ComplexMatrix::new(commutator(h.as_mat(), rho.as_mat()) * (-I))
}

/// Environment ground state `|0><0|`.
pub fn ground_state(d_b: usize) -> DensityMatrix {
    DensityMatrix::pure(&StateVector::basis(d_b, 0).expect("d_b >= 1"))
}

/// Gibbs state `exp(-beta H_B) / Z`.
pub fn gibbs_state(h_b: &HermitianOperator, beta: f64) -> Result<DensityMatrix> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("inverse temperature must be finite and >= 0, got {beta}")));
    }
    let (energies, vectors) = h_b.eigh();
    let e0 = energies[0];
    let weights: Vec<f64> = energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = weights.iter().sum();
    let rho = spectral_function(&energies, &vectors, |e| C64::new((-beta * (e - e0)).exp() / z, 0.0));
    DensityMatrix::from_symmetrized(&rho)
}

/// One environment mode: a truncated oscillator (`levels >= 2`) with frequency `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathMode {
    pub levels: usize,
    pub omega: f64,
    /// Coupling `g_k` in `sum_k g_k (sigma_+ b_k + sigma_- b_k^dag)`.
    pub coupling: f64,
}

/// Qubit with `H_S = omega0 sigma_z / 2` coupled to up to three modes through
/// `H_I = sum_k g_k (sigma_+ kron b_k + sigma_- kron b_k^dag)`.
///
/// The environment starts in its ground state, or the Gibbs state at `beta`.
pub fn qubit_with_modes(omega0: f64, modes: &[BathMode], alpha: f64, beta: Option<f64>) -> Result<TotalSystemModel> {
    if modes.is_empty() || modes.len() > 3 {
        return Err(Error::InvalidArgument(format!("between 1 and 3 bath modes required, got {}", modes.len())));
    }
    if let Some(m) = modes.iter().find(|m| m.levels < 2) {
        return Err(Error::InvalidArgument(format!("bath mode needs at least 2 levels, got {}", m.levels)));
    }
    let d_b: usize = modes.iter().map(|m| m.levels).product();
    let embed = |k: usize, op: &ComplexMatrix| -> Result<ComplexMatrix> {
        let mut acc = ComplexMatrix::identity(1);
        for (j, m) in modes.iter().enumerate() {
            let factor = if j == k { op.clone() } else { ComplexMatrix::identity(m.levels) };
            acc = kron_with_cap(&acc, &factor, DEFAULT_DIM_CAP)?;
        }
        Ok(acc)
    };
    let mut h_b = ComplexMatrix::zeros(d_b, d_b);
    let mut h_i = ComplexMatrix::zeros(2 * d_b, 2 * d_b);
    for (k, m) in modes.iter().enumerate() {
        h_b = &h_b + &(&embed(k, &ops::number(m.levels))? * m.omega);
        let b = embed(k, &ops::annihilation(m.levels))?;
        let term = &kron_with_cap(&ops::sigma_plus(), &b, DEFAULT_DIM_CAP)?
            + &kron_with_cap(&ops::sigma_minus(), &b.adjoint(), DEFAULT_DIM_CAP)?;
        h_i = &h_i + &(&term * m.coupling);
    }
    let h_b = HermitianOperator::new(h_b)?;
    let rho_b = match beta {
        Some(beta) => gibbs_state(&h_b, beta)?,
        None => ground_state(d_b),
    };
    TotalSystemModel::new(
        HermitianOperator::new(&ops::pauli_z() * (0.5 * omega0))?,
        h_b,
        HermitianOperator::new(h_i)?,
        alpha,
        rho_b,
    )
}

/// Identity-padded operator `A kron I_B` for system observables.
pub fn system_observable(a: &ComplexMatrix, d_b: usize) -> Result<ComplexMatrix> {
    kron_with_cap(a, &ComplexMatrix::identity(d_b), DEFAULT_DIM_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::qstate::{matrix_exponential, max_abs};

    fn herm(m: ComplexMatrix) -> HermitianOperator {
        HermitianOperator::new(m).unwrap()
    }

    fn excited() -> DensityMatrix {
        DensityMatrix::pure(&StateVector::basis(2, 0).unwrap())
    }

    #[test]
    fn decoupled_hamiltonian() {
        let m = TotalSystemModel::new(
            herm(ops::pauli_x()),
            HermitianOperator::zeros(3),
            herm(ComplexMatrix::identity(6)),
            0.0,
            ground_state(3),
        )
        .unwrap();
        let h = build_total_hamiltonian(&m).unwrap();
        assert_eq!(h.matrix(), &crate::qstate::kron(&ops::pauli_x(), &ComplexMatrix::identity(3)).unwrap());
    }

    #[test]
    fn kronecker_sum_of_two_sigma_z() {
        let m = TotalSystemModel::new(
            herm(ops::pauli_z()),
            herm(ops::pauli_z()),
            HermitianOperator::zeros(4),
            0.0,
            ground_state(2),
        )
        .unwrap();
        let h = build_total_hamiltonian(&m).unwrap();
        // Product basis |s b>: energies z_s + z_b.
        let z = [1.0, -1.0];
        for s in 0..2 {
            for b in 0..2 {
                for s2 in 0..2 {
                    for b2 in 0..2 {
                        let expected = if s == s2 && b == b2 { z[s] + z[b] } else { 0.0 };
                        assert_eq!(h[(2 * s + b, 2 * s2 + b2)].re, expected);
                    }
                }
            }
        }
        let zero = TotalSystemModel::new(
            HermitianOperator::zeros(2),
            HermitianOperator::zeros(2),
            HermitianOperator::zeros(4),
            1.0,
            ground_state(2),
        )
        .unwrap();
        assert_eq!(build_total_hamiltonian(&zero).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn dimension_cap_enforced() {
        let r = TotalSystemModel::with_cap(
            HermitianOperator::zeros(4),
            HermitianOperator::zeros(4),
            HermitianOperator::zeros(16),
            0.0,
            ground_state(4),
            8,
        );
        assert!(matches!(r, Err(Error::DimensionCap { dim: 16, cap: 8 })));
    }

    #[test]
    fn identity_at_time_zero_and_nan_rejected() {
        let m = fixtures::qubit_two_mode(0.3);
        let s = 1.0 / 2f64.sqrt();
        let rho0 =
            DensityMatrix::pure(&StateVector::from_slice(&[C64::new(s, 0.0), C64::new(0.0, s)]).unwrap());
        let out = evolve_reduced_exact(&m, &rho0, 0.0).unwrap();
        assert!(out.max_abs_diff(&rho0) < 1e-13);
        assert!(matches!(evolve_reduced_exact(&m, &rho0, f64::NAN), Err(Error::InvalidTime(_))));
    }

    #[test]
    fn decoupled_evolution_is_system_unitary() {
        let mut m = fixtures::qubit_two_mode(0.0);
        m.h_s = herm(&ops::pauli_x() * 0.8);
        let s = 1.0 / 2f64.sqrt();
        let rho0 = DensityMatrix::pure(&StateVector::from_slice(&[C64::new(s, 0.0), C64::new(s, 0.0)]).unwrap());
        for t in [0.3, 1.7] {
            let u = matrix_exponential(&m.h_s, C64::new(0.0, -t)).unwrap();
            let exact = u.as_mat() * rho0.as_mat() * u.adjoint().as_mat();
            let out = evolve_reduced_exact(&m, &rho0, t).unwrap();
            assert!(max_abs(&(out.as_mat() - exact)) < 1e-12);
        }
    }

    #[test]
    fn jaynes_cummings_rabi_oscillation() {
        // Two-excitation-free oracle: |e,0> <-> |g,1> with amplitude cos(alpha t).
        let alpha = 0.4;
        let m = fixtures::jaynes_cummings(1.3, alpha);
        let prop = ExactPropagator::new(&m).unwrap();
        for k in 0..20 {
            let t = 0.37 * k as f64;
            let rho = prop.reduced(&excited(), t).unwrap();
            let oracle = (alpha * t).cos().powi(2);
            assert!((rho.population(0) - oracle).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn von_neumann_examples() {
        let z = herm(ops::pauli_z());
        assert_eq!(von_neumann_rhs(&z, &excited()).unwrap().max_abs(), 0.0);
        assert_eq!(von_neumann_rhs(&HermitianOperator::zeros(2), &excited()).unwrap().max_abs(), 0.0);

        let plus = DensityMatrix::maximally_mixed(2).matrix() + &ops::pauli_x().scale(C64::new(0.5, 0.0));
        let plus = DensityMatrix::new(plus).unwrap();
        let out = von_neumann_rhs(&z, &plus).unwrap();
        // [Z, |+><+|] = [[0, 1], [-1, 0]], times -i.
        let oracle = ComplexMatrix::from_row_major(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
        )
        .unwrap();
        assert!(out.max_abs_diff(&oracle) < 1e-15);
        assert!(out.trace().norm() < 1e-12);
        assert!(out.hermiticity_deviation() < 1e-15);
    }

    #[test]
    fn gibbs_state_populations() {
        let h = herm(ops::number(3));
        let rho = gibbs_state(&h, 2.0).unwrap();
        let z: f64 = (0..3).map(|n| (-2.0 * n as f64).exp()).sum();
        for n in 0..3 {
            assert!((rho.population(n) - (-2.0 * n as f64).exp() / z).abs() < 1e-14);
        }
        assert!(gibbs_state(&h, -1.0).is_err());
        assert_eq!(gibbs_state(&h, 0.0).unwrap().population(1), 1.0 / 3.0);
    }

    #[test]
    fn state_space_and_total_purity_preserved() {
        let m = fixtures::qubit_two_mode(0.5);
        let prop = ExactPropagator::new(&m).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let rho0 = DensityMatrix::pure(&StateVector::from_slice(&[C64::new(s, 0.0), C64::new(0.0, s)]).unwrap());
        let total0 = prop.initial_total_state(&rho0).unwrap();
        let purity0 = (&total0 * &total0).trace().re;
        for k in 0..15 {
            let t = 0.5 * k as f64;
            let reduced = prop.reduced(&rho0, t).unwrap();
            assert!((reduced.trace().re - 1.0).abs() < 1e-10);
            assert!(reduced.eigenvalues()[0] >= -1e-10);
            let total = prop.evolve_total(&total0, t).unwrap();
            assert!(((&total * &total).trace().re - purity0).abs() < 1e-10);
        }
    }

    #[test]
    fn total_level_composition() {
        let m = fixtures::qubit_two_mode(0.5);
        let prop = ExactPropagator::new(&m).unwrap();
        let total0 = prop.initial_total_state(&excited()).unwrap();
        let (t1, t2) = (0.8, 1.9);
        let two_legs = prop.evolve_total(&prop.evolve_total(&total0, t1).unwrap(), t2).unwrap();
        let direct = prop.evolve_total(&total0, t1 + t2).unwrap();
        assert!(max_abs(&(two_legs - direct)) < 1e-12);
    }
}
