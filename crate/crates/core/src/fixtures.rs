//! Reference models used across tests, the CLI fixtures and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lindblad::{Channel, LindbladModel};
use crate::micro::{qubit_with_modes, BathMode, TotalSystemModel};
use crate::qops::ProbeModel;
use crate::qstate::{ops, ComplexMatrix, DensityMatrix, HermitianOperator, StateVector, C64};
use crate::tcl::{TimeIndexed, TimeLocalChannel, TimeLocalModel, TimeProfile};

fn lindblad(h: ComplexMatrix, channels: Vec<(f64, ComplexMatrix)>) -> LindbladModel {
    LindbladModel::new(
        HermitianOperator::new(h).expect("fixture Hamiltonian"),
        channels.into_iter().map(|(gamma, op)| Channel { gamma, op }).collect(),
    )
    .expect("fixture model")
}

/// `H = omega0 sigma_z / 2`, one channel `sqrt(gamma) sigma_-`.
pub fn damped_qubit(gamma: f64, omega0: f64) -> LindbladModel {
    lindblad(&ops::pauli_z() * (0.5 * omega0), vec![(gamma, ops::sigma_minus())])
}

/// `H = Omega sigma_x / 2` with `Omega = 2`, decay `gamma = 1`.
pub fn driven_damped_qubit() -> LindbladModel {
    lindblad(ops::pauli_x(), vec![(1.0, ops::sigma_minus())])
}

/// Ladder `0 -> 1 -> 2` with index 0 the top level.
pub fn three_level_cascade() -> LindbladModel {
    let h = ComplexMatrix::from_real_rows(&[&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]]).unwrap();
    lindblad(h, vec![(1.0, ops::transition(3, 1, 0)), (0.5, ops::transition(3, 2, 1))])
}

/// Level 0 decays into both 1 and 2.
pub fn three_level_branching() -> LindbladModel {
    let h = ComplexMatrix::from_real_rows(&[&[1.5, 0.0, 0.0], &[0.0, 0.3, 0.0], &[0.0, 0.0, 0.0]]).unwrap();
    lindblad(h, vec![(0.7, ops::transition(3, 1, 0)), (0.4, ops::transition(3, 2, 0))])
}

/// Oscillator truncated to `d = 10`, `omega = 1`, `kappa = 0.5`.
pub fn damped_oscillator() -> LindbladModel {
    lindblad(ops::number(10), vec![(0.5, ops::annihilation(10))])
}

/// Every Lindblad fixture that the statistical contracts are checked against.
pub fn lindblad_fleet() -> Vec<LindbladModel> {
    vec![
        damped_qubit(1.0, 0.0),
        damped_qubit(0.5, 1.0),
        driven_damped_qubit(),
        three_level_cascade(),
        three_level_branching(),
        damped_oscillator(),
    ]
}

/// Coherent state of the d = 10 oscillator with `alpha = 1`, renormalized after truncation.
pub fn oscillator_coherent_state() -> StateVector {
    let mut amp = Vec::with_capacity(10);
    let mut c = 1.0;
    for n in 0..10 {
        if n > 0 {
            c /= (n as f64).sqrt();
        }
        amp.push(C64::new(c, 0.0));
    }
    StateVector::normalized(DVector::from_vec(amp)).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// Random Hamiltonian and `n_channels` random jump operators, rates in `[0.2, 1.2)`.
pub fn random_lindblad(d: usize, n_channels: usize, seed: u64) -> LindbladModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_matrix(&mut rng, d);
    let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let channels = (0..n_channels)
        .map(|_| {
            let a = random_matrix(&mut rng, d) * C64::new(0.5, 0.0);
            (rng.random_range(0.2..1.2), ComplexMatrix::new(a).unwrap())
        })
        .collect();
    lindblad(ComplexMatrix::new(h).unwrap(), channels)
}

/// Full-rank random density matrix `M M^dag / tr`.
pub fn random_density(d: usize, seed: u64) -> DensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let m = random_matrix(&mut rng, d);
    let rho = &m * m.adjoint();
    let tr = rho.trace();
    DensityMatrix::from_symmetrized(&(rho / tr)).unwrap()
}

pub fn random_state(d: usize, seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    let v = DVector::from_fn(d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    StateVector::normalized(v).unwrap()
}

/// Qubit with `omega0 = 1` and two three-level modes (`d_B = 9`).
pub fn qubit_two_mode(alpha: f64) -> TotalSystemModel {
    let modes = [
        BathMode {
            levels: 3,
            omega: 0.8,
            coupling: 1.0,
        },
        BathMode {
            levels: 3,
            omega: 1.2,
            coupling: 0.7,
        },
    ];
    qubit_with_modes(1.0, &modes, alpha, None).unwrap()
}

/// Qubit in resonance with one two-level mode, coupling 1: the excited
/// population oscillates as `cos^2(alpha t)`.
pub fn jaynes_cummings(omega0: f64, alpha: f64) -> TotalSystemModel {
    let mode = BathMode {
        levels: 2,
        omega: omega0,
        coupling: 1.0,
    };
    qubit_with_modes(omega0, &[mode], alpha, None).unwrap()
}

/// Qubit with `omega0 = 1` and three detuned qubit-like modes (`d_B = 8`),
/// used for weak-coupling comparisons with a fitted decay rate.
pub fn qubit_three_mode(alpha: f64) -> TotalSystemModel {
    let modes = [(0.7, 1.0), (1.0, 1.0), (1.3, 1.0)].map(|(omega, coupling)| BathMode {
        levels: 2,
        omega,
        coupling,
    });
    qubit_with_modes(1.0, &modes, alpha, None).unwrap()
}

/// Damped qubit with rate `gamma(t) = 1 + sin 2t`:
/// `A = B = -gamma(t)/2 |e><e|`, `C = D = sqrt(gamma(t)) sigma_-`.
pub fn tcl_time_dependent_qubit() -> TimeLocalModel {
    let a = TimeIndexed::Profile {
        matrix: &ops::projector(2, 0) * -0.5,
        scalar: TimeProfile::OffsetSin {
            offset: 1.0,
            amp: 1.0,
            omega: 2.0,
        },
    };
    let c = TimeIndexed::Profile {
        matrix: ops::sigma_minus(),
        scalar: TimeProfile::SqrtOffsetSin {
            offset: 1.0,
            amp: 1.0,
            omega: 2.0,
        },
    };
    TimeLocalModel::new(a.clone(), a, vec![TimeLocalChannel { c: c.clone(), d: c }]).unwrap()
}

/// Trace-preserving model with `C != D`:
/// `A = B = -i sigma_x / 2 - gamma |e><e|`, `C = sqrt(gamma) sigma_-`, `D = 2 sqrt(gamma) sigma_-`, `gamma = 0.5`.
pub fn asymmetric_doubled() -> TimeLocalModel {
    let gamma: f64 = 0.5;
    let a = &(&ops::pauli_x() * C64::new(0.0, -0.5)) - &(&ops::projector(2, 0) * gamma);
    let a = TimeIndexed::Constant(a);
    let c = TimeIndexed::Constant(&ops::sigma_minus() * gamma.sqrt());
    let d = TimeIndexed::Constant(&ops::sigma_minus() * (2.0 * gamma.sqrt()));
    TimeLocalModel::new(a.clone(), a, vec![TimeLocalChannel { c, d }]).unwrap()
}

/// Every time-local fixture used for doubled-space checks.
pub fn timelocal_fleet() -> Vec<TimeLocalModel> {
    vec![tcl_time_dependent_qubit(), asymmetric_doubled()]
}

/// CNOT with the system as control: `U = |e><e| kron X + |g><g| kron I`.
/// Probe prepared in `|0>`, read out in `{|0>, |1>}` with values `0, 1`.
pub fn cnot_probe() -> ProbeModel {
    let u = &crate::qstate::kron(&ops::projector(2, 0), &ops::pauli_x()).unwrap()
        + &crate::qstate::kron(&ops::projector(2, 1), &ops::identity(2)).unwrap();
    ProbeModel::new(
        vec![(1.0, StateVector::basis(2, 0).unwrap())],
        vec![(0.0, StateVector::basis(2, 0).unwrap()), (1.0, StateVector::basis(2, 1).unwrap())],
        u,
    )
    .unwrap()
}
