//! Ensembles of pure states and Monte Carlo statistics over trajectories.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::qstate::{check_dim, CMatrix, ComplexMatrix, DensityMatrix, HermitianOperator, StateVector, C64};

/// Trajectories per work unit in parallel runs. Results are reduced in chunk
/// order, so output does not depend on the thread count.
pub const CHUNK_SIZE: usize = 32;

/// One member `(w_a, psi_a, N_a)` of a weighted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub weight: f64,
    pub state: StateVector,
    pub multiplicity: u64,
}

/// A finite ensemble of pure states with normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStateEnsemble {
    members: Vec<Member>,
}

impl WeightedStateEnsemble {
    pub fn new(members: Vec<Member>) -> Result<Self> {
        let d = members.first().ok_or(Error::EmptyEnsemble)?.state.dim();
        for (index, m) in members.iter().enumerate() {
            if !(m.weight >= 0.0) || !m.weight.is_finite() {
                return Err(Error::NegativeWeight { index, weight: m.weight });
            }
            if m.multiplicity == 0 {
                return Err(Error::InvalidArgument(format!("member {index} has multiplicity 0")));
            }
            check_dim("ensemble member", d, m.state.dim())?;
        }
        let sum: f64 = members.iter().map(|m| m.weight).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::WeightSum { sum });
        }
        Ok(Self { members })
    }

    /// Members with unit multiplicity and the given weights.
    pub fn from_weights(members: Vec<(f64, StateVector)>) -> Result<Self> {
        Self::new(
            members
                .into_iter()
                .map(|(weight, state)| Member {
                    weight,
                    state,
                    multiplicity: 1,
                })
                .collect(),
        )
    }

    /// Weights `w_a = N_a / sum_b N_b`.
    pub fn from_counts(members: Vec<(StateVector, u64)>) -> Result<Self> {
        let total: u64 = members.iter().map(|(_, n)| n).sum();
        Self::new(
            members
                .into_iter()
                .map(|(state, multiplicity)| Member {
                    weight: multiplicity as f64 / total as f64,
                    state,
                    multiplicity,
                })
                .collect(),
        )
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].state.dim()
    }

    pub fn total_multiplicity(&self) -> u64 {
        self.members.iter().map(|m| m.multiplicity).sum()
    }

    /// Pools two ensembles, reweighting by multiplicity.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        check_dim("ensemble merge", self.dim(), other.dim())?;
        Self::from_counts(
            self.members
                .iter()
                .chain(&other.members)
                .map(|m| (m.state.clone(), m.multiplicity))
                .collect(),
        )
    }

    /// Effective sample size `1 / sum_a w_a^2 / N_a`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self
            .members
            .iter()
            .map(|m| m.weight * m.weight / m.multiplicity as f64)
            .sum::<f64>()
    }

    /// Index of the member selected by a uniform draw.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, m) in self.members.iter().enumerate() {
            acc += m.weight;
            if u < acc {
                return k;
            }
        }
        self.members.iter().rposition(|m| m.weight > 0.0).unwrap_or(0)
    }

    /// One line per member: `weight, re(a_0), im(a_0), ..., multiplicity`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.members {
            write!(out, "{:?}", m.weight).unwrap();
            for a in m.state.amplitudes().iter() {
                write!(out, ", {:?}, {:?}", a.re, a.im).unwrap();
            }
            writeln!(out, ", {}", m.multiplicity).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut members = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::InvalidArgument(format!("ensemble line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 4 || fields.len() % 2 != 0 {
                return Err(bad("expected weight, re/im pairs and a multiplicity"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("'{s}' is not a number")));
            let weight = num(fields[0])?;
            let multiplicity = fields[fields.len() - 1]
                .parse::<u64>()
                .map_err(|_| bad("multiplicity must be a positive integer"))?;
            let amps = fields[1..fields.len() - 1]
                .chunks(2)
                .map(|p| Ok(C64::new(num(p[0])?, num(p[1])?)))
                .collect::<Result<Vec<_>>>()?;
            members.push(Member {
                weight,
                state: StateVector::new(DVector::from_vec(amps))?,
                multiplicity,
            });
        }
        Self::new(members)
    }
}

/// `rho = sum_a w_a |psi_a><psi_a|`.
pub fn covariance_density(ens: &WeightedStateEnsemble) -> Result<DensityMatrix> {
    let d = ens.dim();
    let mut rho = DMatrix::zeros(d, d);
    for m in &ens.members {
        let psi = m.state.amplitudes();
        rho += psi * psi.adjoint() * C64::new(m.weight, 0.0);
    }
    DensityMatrix::from_symmetrized(&rho)
}

/// Multiplies by a global phase so that the first nonzero amplitude is real and positive.
pub fn canonical_phase(psi: &StateVector) -> Result<StateVector> {
    let amps = psi.amplitudes();
    let scale = amps.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::ZeroVector);
    }
    let pivot = amps.iter().find(|a| a.norm() > 1e-14 * scale).unwrap();
    let phase = pivot.conj() / pivot.norm();
    let mut out = amps * phase;
    // Exact zero imaginary part keeps the map idempotent.
    let k = amps.iter().position(|a| a.norm() > 1e-14 * scale).unwrap();
    out[k] = C64::new(out[k].norm(), 0.0);
    Ok(StateVector::from_raw(out))
}

/// Mean `sum_a w_a <psi_a|A|psi_a>` and its standard error, using the weighted
/// variance with Bessel correction on the effective sample size.
pub fn observable_statistics(ens: &WeightedStateEnsemble, a: &HermitianOperator) -> Result<(f64, f64)> {
    check_dim("observable_statistics", ens.dim(), a.dim())?;
    let values: Vec<f64> = ens
        .members
        .iter()
        .map(|m| {
            let psi = m.state.amplitudes();
            psi.dotc(&(a.as_mat() * psi)).re
        })
        .collect();
    let mean: f64 = ens.members.iter().zip(&values).map(|(m, x)| m.weight * x).sum();
    let var: f64 = ens.members.iter().zip(&values).map(|(m, x)| m.weight * (x - mean).powi(2)).sum();
    let n_eff = ens.effective_size();
    let se = if n_eff > 1.0 + 1e-12 { (var / (n_eff - 1.0)).sqrt() } else { 0.0 };
    Ok((mean, se))
}

/// Running mean and sum of squared deviations, merged with the pairwise update.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlot {
    n: u64,
    mean: CMatrix,
    m2: DMatrix<f64>,
    obs_mean: Vec<C64>,
    obs_m2: Vec<f64>,
    jumps: u64,
}

impl TimeSlot {
    fn new(d: usize, n_obs: usize) -> Self {
        Self {
            n: 0,
            mean: DMatrix::zeros(d, d),
            m2: DMatrix::zeros(d, d),
            obs_mean: vec![C64::new(0.0, 0.0); n_obs],
            obs_m2: vec![0.0; n_obs],
            jumps: 0,
        }
    }

    fn push(&mut self, x: &CMatrix, obs: &[C64], jumps: u64) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for (k, v) in x.iter().enumerate() {
            let delta = v - self.mean[k];
            self.mean[k] += delta * inv;
            self.m2[k] += (delta.conj() * (v - self.mean[k])).re;
        }
        for (k, v) in obs.iter().enumerate() {
            let delta = v - self.obs_mean[k];
            self.obs_mean[k] += delta * inv;
            self.obs_m2[k] += (delta.conj() * (v - self.obs_mean[k])).re;
        }
        self.jumps += jumps;
    }

    fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let f = nb / n;
        let g = na * nb / n;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * f;
            self.m2[k] += other.m2[k] + delta.norm_sqr() * g;
        }
        for k in 0..self.obs_mean.len() {
            let delta = other.obs_mean[k] - self.obs_mean[k];
            self.obs_mean[k] += delta * f;
            self.obs_m2[k] += other.obs_m2[k] + delta.norm_sqr() * g;
        }
        self.n += other.n;
        self.jumps += other.jumps;
    }

    fn statistics(&self, time: f64) -> EnsembleStatistics {
        let n = self.n as f64;
        let se = |m2: f64| {
            if self.n > 1 {
                (m2.max(0.0) / (n * (n - 1.0))).sqrt()
            } else {
                0.0
            }
        };
        EnsembleStatistics {
            time,
            mean: ComplexMatrix::from_raw(self.mean.clone()),
            standard_error: se(self.m2.sum()),
            observables: self
                .obs_mean
                .iter()
                .zip(&self.obs_m2)
                .map(|(&mean, &m2)| ObservableEstimate {
                    mean,
                    standard_error: se(m2),
                })
                .collect(),
            n_samples: self.n,
            mean_jump_count: if self.n > 0 { self.jumps as f64 / n } else { 0.0 },
        }
    }
}

/// Per-time accumulation of `X = |phi><psi|` samples and observable values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryAccumulator {
    times: Vec<f64>,
    slots: Vec<TimeSlot>,
}

impl TrajectoryAccumulator {
    pub fn new(times: &[f64], d: usize, n_observables: usize) -> Self {
        Self {
            times: times.to_vec(),
            slots: times.iter().map(|_| TimeSlot::new(d, n_observables)).collect(),
        }
    }

    /// Adds one sample at time index `k`; `jumps` counts jumps up to that time.
    pub fn push(&mut self, k: usize, x: &CMatrix, observables: &[C64], jumps: u64) {
        self.slots[k].push(x, observables, jumps);
    }

    /// Adds `|psi><psi|` and `<psi|A|psi>` for each observable.
    pub fn push_pure(&mut self, k: usize, psi: &DVector<C64>, observables: &[ComplexMatrix], jumps: u64) {
        self.push_pair(k, psi, psi, observables, jumps);
    }

    /// Adds `|phi><psi|` and `<psi|A|phi>` for each observable.
    pub fn push_pair(&mut self, k: usize, phi: &DVector<C64>, psi: &DVector<C64>, observables: &[ComplexMatrix], jumps: u64) {
        let x = phi * psi.adjoint();
        let obs: Vec<C64> = observables.iter().map(|a| psi.dotc(&(a.as_mat() * phi))).collect();
        self.push(k, &x, &obs, jumps);
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.merge(b);
        }
        self
    }

    pub fn n_samples(&self) -> u64 {
        self.slots.first().map_or(0, |s| s.n)
    }

    pub fn finish(&self) -> Vec<EnsembleStatistics> {
        self.times.iter().zip(&self.slots).map(|(&t, s)| s.statistics(t)).collect()
    }
}

/// Mean and standard error of one tracked observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableEstimate {
    pub mean: C64,
    pub standard_error: f64,
}

/// Sample statistics at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStatistics {
    pub time: f64,
    /// Sample mean of `|phi><psi|`.
    pub mean: ComplexMatrix,
    /// `sqrt(sum_ij Var(X_ij) / n)`, the Frobenius-norm standard error of `mean`.
    pub standard_error: f64,
    pub observables: Vec<ObservableEstimate>,
    pub n_samples: u64,
    pub mean_jump_count: f64,
}

impl EnsembleStatistics {
    /// The Hermitian part of `mean`, validated as a density matrix.
    pub fn mean_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::from_symmetrized(self.mean.as_mat())
    }
}

/// Initial condition for a batch of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Pure(StateVector),
    /// Each trajectory draws its initial state from the ensemble.
    Mixture(WeightedStateEnsemble),
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Pure(psi) => psi.dim(),
            InitialState::Mixture(ens) => ens.dim(),
        }
    }

    pub fn density(&self) -> Result<DensityMatrix> {
        match self {
            InitialState::Pure(psi) => Ok(DensityMatrix::pure(psi)),
            InitialState::Mixture(ens) => covariance_density(ens),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        match self {
            InitialState::Pure(psi) => psi.clone(),
            InitialState::Mixture(ens) => ens.members[ens.sample_index(rng)].state.clone(),
        }
    }
}

impl From<StateVector> for InitialState {
    fn from(psi: StateVector) -> Self {
        InitialState::Pure(psi)
    }
}

/// Runs `work` over `0..n` in chunks of [`CHUNK_SIZE`] and reduces the results
/// in chunk order. `threads = None` uses the global rayon pool.
pub fn run_chunked<T, W, M>(n: usize, threads: Option<usize>, work: W, merge: M) -> Result<Option<T>>
where
    T: Send,
    W: Fn(std::ops::Range<usize>) -> Result<T> + Sync,
    M: Fn(T, T) -> T,
{
    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(CHUNK_SIZE)
        .map(|start| start..(start + CHUNK_SIZE).min(n))
        .collect();
    let compute = || chunks.par_iter().map(|r| work(r.clone())).collect::<Vec<Result<T>>>();
    let results = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?
            .install(compute),
        None => compute(),
    };
    let mut acc: Option<T> = None;
    for r in results {
        let r = r?;
        acc = Some(match acc {
            None => r,
            Some(a) => merge(a, r),
        });
    }
    Ok(acc)
}
