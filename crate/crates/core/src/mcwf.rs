//! Quantum-jump unraveling of Lindblad dynamics.
//!
//! Between jumps the state follows the norm-preserving nonlinear equation
//!
//! ```text
//! d psi/dt = -iH psi - 1/2 sum_i gamma_i (A_i^dag A_i - |A_i psi|^2) psi
//! ```
//!
//! and channel `i` fires at rate `gamma_i |A_i psi|^2`, mapping `psi -> A_i psi / |A_i psi|`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{run_chunked, EnsembleStatistics, InitialState, TrajectoryAccumulator};
use crate::error::{Error, Result};
use crate::lindblad::LindbladModel;
use crate::ode::{check_grid, Dopri5, Tolerances};
use crate::qstate::{check_dim, CMatrix, CVector, ComplexMatrix, StateVector, C64};

/// Jumps from states with `|A psi|` at or below this are refused.
pub const DARK_STATE_EPS: f64 = 1e-12;

/// Counter-based random stream `(master_seed, stream_index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// One realization sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub sample_times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// `(time, channel)` in ascending time order.
    pub jump_log: Vec<(f64, usize)>,
}

impl TrajectoryRecord {
    /// Number of jumps at or before `t`.
    pub fn jumps_until(&self, t: f64) -> usize {
        self.jump_log.partition_point(|&(tj, _)| tj <= t)
    }
}

fn check_state(model: &LindbladModel, psi: &StateVector) -> Result<()> {
    check_dim("state vector", model.dim(), psi.dim())
}

/// Right-hand side of the nonlinear Schrödinger equation.
pub fn nonlinear_drift(model: &LindbladModel, psi: &StateVector) -> Result<CVector> {
    check_state(model, psi)?;
    Ok(drift_raw(model, psi.amplitudes()))
}

fn drift_raw(model: &LindbladModel, psi: &CVector) -> CVector {
    let mut out = model.effective_generator() * psi;
    let mut shift = 0.0;
    for ch in model.channels() {
        if ch.gamma != 0.0 {
            shift += ch.gamma * (ch.op.as_mat() * psi).norm_squared();
        }
    }
    out.axpy(C64::new(0.5 * shift, 0.0), psi, C64::new(1.0, 0.0));
    out
}

fn rates_raw(model: &LindbladModel, psi: &CVector) -> Vec<f64> {
    model
        .channels()
        .iter()
        .map(|ch| if ch.gamma == 0.0 { 0.0 } else { ch.gamma * (ch.op.as_mat() * psi).norm_squared() })
        .collect()
}

/// `lambda_i = gamma_i |A_i psi|^2`.
pub fn jump_rates(model: &LindbladModel, psi: &StateVector) -> Result<Vec<f64>> {
    check_state(model, psi)?;
    Ok(rates_raw(model, psi.amplitudes()))
}

/// `A_i psi / |A_i psi|`.
pub fn apply_jump(model: &LindbladModel, i: usize, psi: &StateVector) -> Result<StateVector> {
    check_state(model, psi)?;
    let ch = model.channels().get(i).ok_or(Error::ChannelOutOfRange {
        index: i,
        count: model.channels().len(),
    })?;
    jump_raw(ch.op.as_mat(), psi.amplitudes())
}

fn jump_raw(op: &CMatrix, psi: &CVector) -> Result<StateVector> {
    let v = op * psi;
    let norm = v.norm();
    if !(norm > DARK_STATE_EPS * psi.norm()) {
        return Err(Error::DarkState { norm });
    }
    Ok(StateVector::from_raw(v.unscale(norm)))
}

/// Picks index `i` with probability `rates[i] / sum(rates)` from a uniform `u` in `[0, 1)`.
pub(crate) fn choose_channel(rates: &[f64], u: f64) -> Option<usize> {
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = u * total;
    let mut acc = 0.0;
    for (i, r) in rates.iter().enumerate() {
        acc += r;
        if target < acc {
            return Some(i);
        }
    }
    rates.iter().rposition(|&r| r > 0.0)
}

/// Uniform draw on `(0, 1]`.
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Samples one trajectory with the waiting-time method: the unnormalized state
/// follows the linear no-jump equation until its squared norm falls to a uniform
/// threshold, at which point a jump occurs.
pub fn sample_trajectory(model: &LindbladModel, psi0: &StateVector, t_grid: &[f64], stream: RngStream) -> Result<TrajectoryRecord> {
    sample_trajectory_with(model, psi0, t_grid, &mut stream.rng())
}

pub fn sample_trajectory_with<R: Rng + ?Sized>(
    model: &LindbladModel,
    psi0: &StateVector,
    t_grid: &[f64],
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    check_state(model, psi0)?;
    check_grid(t_grid)?;
    let d = model.dim();
    let g = model.effective_generator();
    let rhs = |_t: f64, y: &[C64], dy: &mut [C64]| {
        let y = nalgebra::DVectorView::from_slice(y, d);
        nalgebra::DVectorViewMut::from_slice(dy, d).gemv(C64::new(1.0, 0.0), g, &y, C64::new(0.0, 0.0));
    };
    let t0 = t_grid[0];
    let span = (t_grid[t_grid.len() - 1] - t0).max(f64::MIN_POSITIVE);
    let time_tol = 1e-9 * span;
    let mut stepper = Dopri5::new(rhs, t0, psi0.amplitudes().as_slice().to_vec(), Tolerances::default());
    let mut eta = open_unit(rng);
    let mut states = Vec::with_capacity(t_grid.len());
    let mut jump_log = Vec::new();
    let mut buf = vec![C64::new(0.0, 0.0); d];

    states.push(psi0.clone());
    for &target in &t_grid[1..] {
        while stepper.t() < target {
            stepper.step(target)?;
            if norm_sqr(stepper.y()) > eta {
                continue;
            }
            let (mut lo, mut hi) = stepper.last_step();
            while hi - lo > time_tol {
                let mid = 0.5 * (lo + hi);
                stepper.dense(mid, &mut buf);
                if norm_sqr(&buf) > eta {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tau = hi;
            stepper.dense(tau, &mut buf);
            let pre = DVector::from_column_slice(&buf);
            let pre = &pre / C64::new(pre.norm(), 0.0);
            let rates = rates_raw(model, &pre);
            match choose_channel(&rates, rng.random()) {
                Some(i) => {
                    let post = jump_raw(model.channels()[i].op.as_mat(), &pre)?;
                    // Keep the recorded jump strictly inside the grid interval.
                    let tau = tau.min(stepper.t());
                    jump_log.push((tau, i));
                    stepper.reset(tau, post.amplitudes().as_slice());
                    eta = open_unit(rng);
                }
                None => {
                    // Numerically vanishing rates: restart the threshold from the current norm.
                    stepper.reset(tau, pre.as_slice());
                    eta = open_unit(rng);
                }
            }
        }
        let n2 = norm_sqr(stepper.y());
        let n = n2.sqrt();
        states.push(StateVector::from_raw(DVector::from_iterator(d, stepper.y().iter().map(|z| z / n))));
        stepper.rescale(1.0 / n);
        eta /= n2;
    }
    Ok(TrajectoryRecord {
        sample_times: t_grid.to_vec(),
        states,
        jump_log,
    })
}

fn norm_sqr(y: &[C64]) -> f64 {
    y.iter().map(|z| z.norm_sqr()).sum()
}

/// Reference sampler: fixed-step RK4 on the nonlinear drift with at most one
/// jump per step drawn as `Bernoulli(sum_i lambda_i dt)`.
pub fn sample_trajectory_bernoulli<R: Rng + ?Sized>(
    model: &LindbladModel,
    psi0: &StateVector,
    t_grid: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    check_state(model, psi0)?;
    check_grid(t_grid)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {dt}")));
    }
    let mut psi = psi0.amplitudes().clone();
    let mut t = t_grid[0];
    let mut states = vec![psi0.clone()];
    let mut jump_log = Vec::new();
    for &target in &t_grid[1..] {
        let n = ((target - t) / dt).ceil().max(1.0) as usize;
        let h = (target - t) / n as f64;
        for _ in 0..n {
            let rates = rates_raw(model, &psi);
            let total: f64 = rates.iter().sum();
            let u: f64 = rng.random();
            if u < total * h {
                let i = choose_channel(&rates, u / (total * h)).expect("positive total rate");
                psi = jump_raw(model.channels()[i].op.as_mat(), &psi)?.into_amplitudes();
                jump_log.push((t + h, i));
            } else {
                psi = rk4(|y| drift_raw(model, y), &psi, h);
                psi.unscale_mut(psi.norm());
            }
            t += h;
        }
        t = target;
        states.push(StateVector::from_raw(psi.clone()));
    }
    Ok(TrajectoryRecord {
        sample_times: t_grid.to_vec(),
        states,
        jump_log,
    })
}

pub(crate) fn rk4(f: impl Fn(&CVector) -> CVector, y: &CVector, h: f64) -> CVector {
    let h = C64::new(h, 0.0);
    let half = h * 0.5;
    let k1 = f(y);
    let k2 = f(&(y + &k1 * half));
    let k3 = f(&(y + &k2 * half));
    let k4 = f(&(y + &k3 * h));
    y + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (h / 6.0)
}

/// Settings shared by the trajectory drivers.
#[derive(Debug, Clone, Default)]
pub struct UnravelOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Observables whose means and standard errors are tracked.
    pub observables: Vec<ComplexMatrix>,
}

/// Estimates `rho(t) = E[|psi(t)><psi(t)|]` from `n_traj` trajectories.
/// Trajectory `k` uses the stream `(master_seed, k)`.
pub fn unravel_to_density(
    model: &LindbladModel,
    init: &InitialState,
    t_grid: &[f64],
    n_traj: usize,
    master_seed: u64,
    options: &UnravelOptions,
) -> Result<Vec<EnsembleStatistics>> {
    if n_traj < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 trajectories required, got {n_traj}")));
    }
    check_dim("initial state", model.dim(), init.dim())?;
    for a in &options.observables {
        check_dim("observable", model.dim(), a.dim_rows())?;
        check_dim("observable", model.dim(), a.dim_cols())?;
    }
    check_grid(t_grid)?;
    let work = |range: std::ops::Range<usize>| {
        let mut acc = TrajectoryAccumulator::new(t_grid, model.dim(), options.observables.len());
        for k in range {
            let mut rng = RngStream::new(master_seed, k as u64).rng();
            let psi0 = init.sample(&mut rng);
            let record = sample_trajectory_with(model, &psi0, t_grid, &mut rng)?;
            for (j, (t, psi)) in record.sample_times.iter().zip(&record.states).enumerate() {
                acc.push_pure(j, psi.amplitudes(), &options.observables, record.jumps_until(*t) as u64);
            }
        }
        Ok(acc)
    };
    let acc = run_chunked(n_traj, options.threads, work, |a, b| a.merge(&b))?.expect("n_traj >= 2");
    Ok(acc.finish())
}
