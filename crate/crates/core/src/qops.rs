//! Quantum operations from an indirect probe measurement.
//!
//! The system interacts with a probe prepared in `rho_B = sum_k p_k |phi_k><phi_k|`
//! through `U`, after which the probe observable `R = sum_m r_m |phi_m><phi_m|`
//! is read out. Outcome `m` acts on the system through the Kraus operators
//! `Omega_mk = sqrt(p_k) <phi_m| U |phi_k>`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::micro::{ExactPropagator, TotalSystemModel};
use crate::qstate::{
    check_dim, eigh, hermitian_part, max_abs, CMatrix, ComplexMatrix, DensityMatrix, StateVector, C64, NORM_TOL,
};
use crate::superop::Superoperator;

/// Probabilities below this are treated as impossible outcomes.
pub const IMPOSSIBLE_OUTCOME_EPS: f64 = 1e-12;
/// Tolerance for `U^dag U = I`, basis orthonormality and Kraus completeness.
pub const OPERATION_TOL: f64 = 1e-10;

/// Probe preparation, readout basis and coupling unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    ensemble: Vec<(f64, StateVector)>,
    basis: Vec<(f64, StateVector)>,
    u: ComplexMatrix,
    d_s: usize,
    d_b: usize,
}

impl ProbeModel {
    /// `ensemble` holds `(p_k, phi_k)`, `basis` holds `(r_m, phi_m)`.
    pub fn new(ensemble: Vec<(f64, StateVector)>, basis: Vec<(f64, StateVector)>, u: ComplexMatrix) -> Result<Self> {
        let (_, first) = ensemble.first().ok_or(Error::EmptyEnsemble)?;
        let d_b = first.dim();
        for (index, (p, phi)) in ensemble.iter().enumerate() {
            if !(*p >= 0.0) || !p.is_finite() {
                return Err(Error::NegativeWeight { index, weight: *p });
            }
            check_dim("probe ensemble state", d_b, phi.dim())?;
        }
        let sum: f64 = ensemble.iter().map(|(p, _)| p).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::WeightSum { sum });
        }

        check_dim("readout basis size", d_b, basis.len())?;
        for (_, phi) in &basis {
            check_dim("readout basis state", d_b, phi.dim())?;
        }
        let mut deviation: f64 = 0.0;
        for (i, (_, a)) in basis.iter().enumerate() {
            for (j, (_, b)) in basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                deviation = deviation.max((a.amplitudes().dotc(b.amplitudes()) - C64::new(target, 0.0)).norm());
            }
        }
        if deviation > OPERATION_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        for (i, (ri, _)) in basis.iter().enumerate() {
            if !ri.is_finite() {
                return Err(Error::InvalidArgument(format!("readout value r_{i} is not finite")));
            }
            if let Some(j) = basis[..i].iter().position(|(rj, _)| rj == ri) {
                return Err(Error::DegenerateSpectrum { first: j, second: i });
            }
        }

        u.require_square()?;
        let n = u.dim_rows();
        if n % d_b != 0 {
            return Err(Error::InvalidArgument(format!(
                "coupling unitary dimension {n} is not a multiple of the probe dimension {d_b}"
            )));
        }
        let deviation = max_abs(&(u.adjoint().as_mat() * u.as_mat() - DMatrix::identity(n, n)));
        if deviation > OPERATION_TOL {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(Self {
            ensemble,
            basis,
            d_s: n / d_b,
            d_b,
            u,
        })
    }

    /// Probe built from a total-system model: `U = exp(-i H tau)`, the probe
    /// ensemble is the eigendecomposition of `rho_B` and the readout is the
    /// computational basis of the environment with values `0, 1, ...`.
    pub fn from_total_system(model: &TotalSystemModel, tau: f64) -> Result<Self> {
        let propagator = ExactPropagator::new(model)?;
        let u = propagator.unitary(tau)?;
        let (values, vectors) = eigh(model.rho_b.as_mat());
        let d_b = model.d_b();
        let mut ensemble = Vec::new();
        for (k, &p) in values.iter().enumerate() {
            if p > 1e-15 {
                ensemble.push((p, StateVector::normalized(vectors.column(k).into_owned())?));
            }
        }
        let sum: f64 = ensemble.iter().map(|(p, _)| p).sum();
        for (p, _) in &mut ensemble {
            *p /= sum;
        }
        let basis = (0..d_b)
            .map(|m| Ok((m as f64, StateVector::basis(d_b, m)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ensemble, basis, u)
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn d_b(&self) -> usize {
        self.d_b
    }

    pub fn ensemble(&self) -> &[(f64, StateVector)] {
        &self.ensemble
    }

    pub fn basis(&self) -> &[(f64, StateVector)] {
        &self.basis
    }

    pub fn unitary(&self) -> &ComplexMatrix {
        &self.u
    }
}

/// Kraus operators of one outcome together with its readout value `r_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub label: f64,
    pub kraus: Vec<ComplexMatrix>,
}

/// A complete set of outcomes `{Phi_m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumOperation {
    outcomes: Vec<Outcome>,
    dim: usize,
}

impl QuantumOperation {
    pub fn new(outcomes: Vec<Outcome>) -> Result<Self> {
        let first = outcomes
            .iter()
            .flat_map(|o| o.kraus.first())
            .next()
            .ok_or_else(|| Error::InvalidArgument("quantum operation needs at least one Kraus operator".into()))?;
        let d = first.dim_rows();
        let mut sum = DMatrix::<C64>::zeros(d, d);
        for k in outcomes.iter().flat_map(|o| &o.kraus) {
            check_dim("Kraus operator rows", d, k.dim_rows())?;
            check_dim("Kraus operator columns", d, k.dim_cols())?;
            sum += k.adjoint().as_mat() * k.as_mat();
        }
        let deviation = max_abs(&(sum - DMatrix::identity(d, d)));
        if deviation > OPERATION_TOL {
            return Err(Error::NotComplete { deviation });
        }
        Ok(Self { outcomes, dim: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    fn outcome(&self, m: usize) -> Result<&Outcome> {
        self.outcomes.get(m).ok_or(Error::OutcomeOutOfRange {
            index: m,
            count: self.outcomes.len(),
        })
    }

    /// Superoperator of `Phi_m`.
    pub fn superoperator(&self, m: usize) -> Result<Superoperator> {
        let d = self.dim;
        let mut s = Superoperator::zeros(d);
        for k in &self.outcome(m)?.kraus {
            s = s.add(&Superoperator::sandwich(k.as_mat(), &k.adjoint().into_inner()))?;
        }
        Ok(s)
    }

    /// Choi matrix of `Phi_m`.
    pub fn choi(&self, m: usize) -> Result<ComplexMatrix> {
        Ok(ComplexMatrix::from_raw(self.superoperator(m)?.choi()))
    }
}

/// `Omega_mk[i, j] = sqrt(p_k) sum_{b, b'} conj(phi_m[b]) U[(i, b), (j, b')] phi_k[b']`.
pub fn kraus_from_probe(probe: &ProbeModel) -> Result<QuantumOperation> {
    let (d_s, d_b) = (probe.d_s, probe.d_b);
    let u = probe.u.as_mat();
    let outcomes = probe
        .basis
        .iter()
        .map(|(r_m, phi_m)| {
            let kraus = probe
                .ensemble
                .iter()
                .map(|(p_k, phi_k)| {
                    let scale = p_k.sqrt();
                    let m = DMatrix::from_fn(d_s, d_s, |i, j| {
                        let mut acc = C64::new(0.0, 0.0);
                        for b in 0..d_b {
                            let bra = phi_m[b].conj();
                            if bra == C64::new(0.0, 0.0) {
                                continue;
                            }
                            for bp in 0..d_b {
                                acc += bra * u[(i * d_b + b, j * d_b + bp)] * phi_k[bp];
                            }
                        }
                        acc * scale
                    });
                    ComplexMatrix::from_raw(m)
                })
                .collect();
            Outcome { label: *r_m, kraus }
        })
        .collect();
    QuantumOperation::new(outcomes)
}

fn apply_raw(outcome: &Outcome, rho: &CMatrix) -> CMatrix {
    let mut out = DMatrix::zeros(rho.nrows(), rho.ncols());
    for k in &outcome.kraus {
        out += k.as_mat() * rho * k.as_mat().adjoint();
    }
    out
}

/// Unnormalized `Phi_m(rho) = sum_k Omega_mk rho Omega_mk^dag`.
pub fn apply_operation(op: &QuantumOperation, m: usize, rho: &DensityMatrix) -> Result<ComplexMatrix> {
    check_dim("apply_operation", op.dim, rho.dim())?;
    Ok(ComplexMatrix::from_raw(apply_raw(op.outcome(m)?, rho.as_mat())))
}

/// `P(m) = tr Phi_m(rho)`, clamped to `[0, 1]`.
pub fn outcome_probability(op: &QuantumOperation, m: usize, rho: &DensityMatrix) -> Result<f64> {
    Ok(apply_operation(op, m, rho)?.trace().re.clamp(0.0, 1.0))
}

pub fn outcome_probabilities(op: &QuantumOperation, rho: &DensityMatrix) -> Result<Vec<f64>> {
    (0..op.len()).map(|m| outcome_probability(op, m, rho)).collect()
}

/// `Phi_m(rho) / P(m)`, refusing outcomes with `P(m) <= 1e-12`.
pub fn selective_post_state(op: &QuantumOperation, m: usize, rho: &DensityMatrix) -> Result<DensityMatrix> {
    selective_post_state_with(op, m, rho, IMPOSSIBLE_OUTCOME_EPS)
}

pub fn selective_post_state_with(op: &QuantumOperation, m: usize, rho: &DensityMatrix, eps: f64) -> Result<DensityMatrix> {
    let phi = apply_operation(op, m, rho)?;
    let probability = phi.trace().re;
    if !(probability > eps) {
        return Err(Error::ImpossibleOutcome { outcome: m, probability });
    }
    DensityMatrix::from_symmetrized(&(phi.as_mat() / C64::new(probability, 0.0)))
}

/// `sum_m Phi_m(rho)`, with the trace restored to exactly 1.
pub fn nonselective_post_state(op: &QuantumOperation, rho: &DensityMatrix) -> Result<DensityMatrix> {
    check_dim("nonselective_post_state", op.dim, rho.dim())?;
    let mut sum = DMatrix::zeros(op.dim, op.dim);
    for outcome in &op.outcomes {
        sum += apply_raw(outcome, rho.as_mat());
    }
    let tr = sum.trace().re;
    if (tr - 1.0).abs() > NORM_TOL {
        return Err(Error::TraceNotUnit { trace: tr });
    }
    DensityMatrix::from_symmetrized(&hermitian_part(&(sum / C64::new(tr, 0.0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::micro::evolve_reduced_exact;
    use crate::qstate::{kron, ops};
    use proptest::prelude::*;

    fn ket(amps: &[(f64, f64)]) -> StateVector {
        StateVector::normalized(nalgebra::DVector::from_iterator(
            amps.len(),
            amps.iter().map(|&(r, i)| C64::new(r, i)),
        ))
        .unwrap()
    }

    fn plus() -> StateVector {
        ket(&[(1.0, 0.0), (1.0, 0.0)])
    }

    fn minus() -> StateVector {
        ket(&[(1.0, 0.0), (-1.0, 0.0)])
    }

    fn projective() -> QuantumOperation {
        QuantumOperation::new(vec![
            Outcome {
                label: -1.0,
                kraus: vec![ops::projector(2, 1)],
            },
            Outcome {
                label: 1.0,
                kraus: vec![ops::projector(2, 0)],
            },
        ])
        .unwrap()
    }

    /// Kraus pair `K_0 = |g><g| + sqrt(1-p)|e><e|`, `K_1 = sqrt(p) sigma_-`, one outcome each.
    fn amplitude_damping(p: f64) -> QuantumOperation {
        let k0 = &ops::projector(2, 1) + &(&ops::projector(2, 0) * (1.0 - p).sqrt());
        let k1 = &ops::sigma_minus() * p.sqrt();
        QuantumOperation::new(vec![
            Outcome { label: 0.0, kraus: vec![k0] },
            Outcome { label: 1.0, kraus: vec![k1] },
        ])
        .unwrap()
    }

    fn column(v: &StateVector) -> ComplexMatrix {
        ComplexMatrix::from_raw(DMatrix::from_column_slice(v.dim(), 1, v.amplitudes().as_slice()))
    }

    /// Explicit `<phi_m| U |phi_0>` on the four-dimensional space, written out
    /// in terms of the 4x4 entries with system index major.
    fn matrix_element_oracle(u: &ComplexMatrix, phi_m: &StateVector, phi_k: &StateVector) -> CMatrix {
        let mut out = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let bra = kron(
                    &column(&StateVector::basis(2, i).unwrap()),
                    &column(phi_m),
                )
                .unwrap();
                let ket = kron(
                    &column(&StateVector::basis(2, j).unwrap()),
                    &column(phi_k),
                )
                .unwrap();
                out[(i, j)] = (bra.adjoint().as_mat() * u.as_mat() * ket.as_mat())[(0, 0)];
            }
        }
        out
    }

    #[test]
    fn trivial_coupling_gives_identity_kraus() {
        let probe = ProbeModel::new(
            vec![(1.0, StateVector::basis(2, 0).unwrap())],
            vec![(0.0, StateVector::basis(2, 0).unwrap()), (1.0, StateVector::basis(2, 1).unwrap())],
            ComplexMatrix::identity(4),
        )
        .unwrap();
        let op = kraus_from_probe(&probe).unwrap();
        assert_eq!(op.outcomes()[0].kraus[0], ComplexMatrix::identity(2));
        assert_eq!(op.outcomes()[1].kraus[0].max_abs(), 0.0);
    }

    #[test]
    fn cnot_probe_measures_the_system() {
        let probe = fixtures::cnot_probe();
        let op = kraus_from_probe(&probe).unwrap();
        assert!(op.outcomes()[0].kraus[0].max_abs_diff(&ops::projector(2, 1)) < 1e-15);
        assert!(op.outcomes()[1].kraus[0].max_abs_diff(&ops::projector(2, 0)) < 1e-15);
        for (m, (_, phi_m)) in probe.basis().iter().enumerate() {
            let oracle = matrix_element_oracle(probe.unitary(), phi_m, &probe.ensemble()[0].1);
            assert!(max_abs(&(op.outcomes()[m].kraus[0].as_mat() - oracle)) < 1e-15);
        }
        assert_eq!(op.outcomes()[1].label, 1.0);
    }

    #[test]
    fn cnot_probe_in_conjugate_basis() {
        let cnot = fixtures::cnot_probe();
        let probe = ProbeModel::new(
            vec![(1.0, StateVector::basis(2, 0).unwrap())],
            vec![(1.0, plus()), (-1.0, minus())],
            cnot.unitary().clone(),
        )
        .unwrap();
        let op = kraus_from_probe(&probe).unwrap();
        let mut completeness = DMatrix::zeros(2, 2);
        for (m, (_, phi_m)) in probe.basis().iter().enumerate() {
            let k = &op.outcomes()[m].kraus[0];
            let oracle = matrix_element_oracle(probe.unitary(), phi_m, &probe.ensemble()[0].1);
            assert!(max_abs(&(k.as_mat() - &oracle)) < 1e-15);
            completeness += oracle.adjoint() * oracle;
        }
        assert!(max_abs(&(completeness - DMatrix::identity(2, 2))) < 1e-14);
        // Omega_+ = I/sqrt2, Omega_- = sigma_z/sqrt2 with sigma_z = |e><e| - |g><g|.
        let s = 1.0 / 2f64.sqrt();
        assert!(op.outcomes()[0].kraus[0].max_abs_diff(&(&ops::identity(2) * s)) < 1e-15);
        assert!(op.outcomes()[1].kraus[0].max_abs_diff(&(&ops::pauli_z() * -s)) < 1e-15);
    }

    #[test]
    fn probe_validation() {
        let e = StateVector::basis(2, 0).unwrap();
        let g = StateVector::basis(2, 1).unwrap();
        let basis = vec![(0.0, e.clone()), (1.0, g.clone())];
        let u = ComplexMatrix::identity(4);
        assert!(matches!(
            ProbeModel::new(vec![(0.5, e.clone())], basis.clone(), u.clone()),
            Err(Error::WeightSum { .. })
        ));
        assert!(matches!(
            ProbeModel::new(vec![(1.0, e.clone())], vec![(0.0, e.clone()), (1.0, plus())], u.clone()),
            Err(Error::NotOrthonormal { .. })
        ));
        assert!(matches!(
            ProbeModel::new(vec![(1.0, e.clone())], vec![(0.0, e.clone()), (0.0, g.clone())], u.clone()),
            Err(Error::DegenerateSpectrum { first: 0, second: 1 })
        ));
        assert!(matches!(
            ProbeModel::new(vec![(1.0, e.clone())], basis.clone(), &u * 1.1),
            Err(Error::NotUnitary { .. })
        ));
        assert!(ProbeModel::new(vec![(1.0, e)], vec![(0.0, g)], u).is_err());
    }

    #[test]
    fn operation_examples() {
        let id = QuantumOperation::new(vec![Outcome {
            label: 0.0,
            kraus: vec![ComplexMatrix::identity(2)],
        }])
        .unwrap();
        let rho = fixtures::random_density(2, 1);
        assert_eq!(apply_operation(&id, 0, &rho).unwrap(), *rho.matrix());
        assert_eq!(outcome_probability(&id, 0, &rho).unwrap(), 1.0);
        assert!(selective_post_state(&id, 0, &rho).unwrap().max_abs_diff(rho.matrix()) < 1e-15);
        assert!(nonselective_post_state(&id, &rho).unwrap().max_abs_diff(rho.matrix()) < 1e-15);
        assert!(matches!(apply_operation(&id, 1, &rho), Err(Error::OutcomeOutOfRange { index: 1, count: 1 })));

        let mixed = DensityMatrix::maximally_mixed(2);
        let proj = projective();
        let half_g = &ops::projector(2, 1) * 0.5;
        assert!(apply_operation(&proj, 0, &mixed).unwrap().max_abs_diff(&half_g) < 1e-16);
        assert_eq!(outcome_probabilities(&proj, &mixed).unwrap(), vec![0.5, 0.5]);
        assert!(selective_post_state(&proj, 0, &mixed).unwrap().max_abs_diff(&ops::projector(2, 1)) < 1e-15);
        let p = DensityMatrix::pure(&plus());
        assert!(nonselective_post_state(&proj, &p).unwrap().max_abs_diff(mixed.matrix()) < 1e-15);
    }

    #[test]
    fn amplitude_damping_branches() {
        let p = 0.3;
        let op = amplitude_damping(p);
        let e = DensityMatrix::pure(&StateVector::basis(2, 0).unwrap());
        assert!((apply_operation(&op, 1, &e).unwrap().trace().re - p).abs() < 1e-15);
        let post = selective_post_state(&op, 1, &DensityMatrix::pure(&plus())).unwrap();
        assert!(post.max_abs_diff(&ops::projector(2, 1)) < 1e-15);
    }

    #[test]
    fn impossible_outcome_is_an_error() {
        let g = DensityMatrix::pure(&StateVector::basis(2, 1).unwrap());
        let err = selective_post_state(&projective(), 1, &g).unwrap_err();
        assert!(matches!(err, Error::ImpossibleOutcome { outcome: 1, .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn incomplete_kraus_rejected() {
        let res = QuantumOperation::new(vec![Outcome {
            label: 0.0,
            kraus: vec![ops::projector(2, 0)],
        }]);
        assert!(matches!(res, Err(Error::NotComplete { .. })));
    }

    #[test]
    fn choi_of_every_outcome_is_positive() {
        let op = kraus_from_probe(&fixtures::cnot_probe()).unwrap();
        for m in 0..op.len() {
            assert!(op.superoperator(m).unwrap().choi_min_eigenvalue() >= -1e-10);
        }
    }

    #[test]
    fn mixed_probe_uses_square_root_weights() {
        // Probe in I/2: the CNOT then dephases regardless of outcome.
        let cnot = fixtures::cnot_probe();
        let probe = ProbeModel::new(
            vec![(0.5, StateVector::basis(2, 0).unwrap()), (0.5, StateVector::basis(2, 1).unwrap())],
            cnot.basis().to_vec(),
            cnot.unitary().clone(),
        )
        .unwrap();
        let op = kraus_from_probe(&probe).unwrap();
        assert_eq!(op.outcomes()[0].kraus.len(), 2);
        let p = DensityMatrix::pure(&plus());
        for m in 0..2 {
            assert!((outcome_probability(&op, m, &p).unwrap() - 0.5).abs() < 1e-15);
        }
        let post = nonselective_post_state(&op, &p).unwrap();
        assert!(post.max_abs_diff(&ops::identity(2).scale(C64::new(0.5, 0.0))) < 1e-15);
    }

    #[test]
    fn nonselective_matches_exact_micro_evolution() {
        let model = fixtures::qubit_two_mode(0.4);
        let rho = fixtures::random_density(2, 17);
        for tau in [0.3, 1.7] {
            let op = kraus_from_probe(&ProbeModel::from_total_system(&model, tau).unwrap()).unwrap();
            let a = nonselective_post_state(&op, &rho).unwrap();
            let b = evolve_reduced_exact(&model, &rho, tau).unwrap();
            assert!(a.max_abs_diff(b.matrix()) <= 1e-10);
        }
    }

    proptest! {
        #[test]
        fn convex_linearity(s1 in 0u64..1000, s2 in 0u64..1000, lambda in 0.0f64..1.0) {
            let op = kraus_from_probe(&fixtures::cnot_probe()).unwrap();
            let r1 = fixtures::random_density(2, s1);
            let r2 = fixtures::random_density(2, s2 + 5000);
            let mix = DensityMatrix::from_symmetrized(&(r1.as_mat() * C64::new(lambda, 0.0) + r2.as_mat() * C64::new(1.0 - lambda, 0.0))).unwrap();
            for m in 0..op.len() {
                let lhs = apply_operation(&op, m, &mix).unwrap();
                let rhs = &(&apply_operation(&op, m, &r1).unwrap() * lambda) + &(&apply_operation(&op, m, &r2).unwrap() * (1.0 - lambda));
                prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
            }
        }

        #[test]
        fn nonselective_is_mixture_of_selective(seed in 0u64..1000) {
            let op = amplitude_damping(0.45);
            let rho = fixtures::random_density(2, seed);
            let probs = outcome_probabilities(&op, &rho).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            let mut mix = DMatrix::zeros(2, 2);
            for (m, p) in probs.iter().enumerate() {
                mix += selective_post_state(&op, m, &rho).unwrap().as_mat() * C64::new(*p, 0.0);
            }
            prop_assert!(max_abs(&(mix - nonselective_post_state(&op, &rho).unwrap().as_mat())) <= 1e-12);
        }
    }
}
