//! Piecewise deterministic process in the doubled Hilbert space.
//!
//! The pair `theta = (phi, psi)` drifts as
//!
//! ```text
//! d theta/dt = F(t) theta + 1/2 sum_i lambda_i(t) theta,    lambda_i = |J_i theta|^2 / |theta|^2
//! ```
//!
//! with `F = diag(A, B)` and `J_i = diag(C_i, D_i)`, and jumps
//! `theta -> |theta| J_i theta / |J_i theta|` at rate `lambda_i`. The average
//! `E[|phi><psi|]` solves the time-local master equation.

use nalgebra::{DVector, DVectorView};
use rand::Rng;

use crate::ensemble::{run_chunked, EnsembleStatistics, InitialState, TrajectoryAccumulator};
use crate::error::{Error, Result};
use crate::mcwf::{choose_channel, open_unit, rk4, RngStream, UnravelOptions};
use crate::ode::{check_grid, Dopri5, Tolerances};
use crate::qstate::{check_dim, CMatrix, CVector, StateVector, C64};
use crate::tcl::TimeLocalModel;

/// Smallest admissible combined squared norm `|phi|^2 + |psi|^2`.
pub const MIN_NORM_SQR: f64 = 1e-12;

/// The pair `(phi, psi)`; the components need not be normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubledState {
    pub phi: CVector,
    pub psi: CVector,
}

impl DoubledState {
    pub fn new(phi: CVector, psi: CVector) -> Result<Self> {
        check_dim("doubled state components", phi.len(), psi.len())?;
        let theta = Self { phi, psi };
        let n2 = theta.norm_sqr();
        if !(n2 > MIN_NORM_SQR) || !n2.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(theta)
    }

    /// `(psi, psi)`.
    pub fn symmetric(psi: &StateVector) -> Self {
        Self {
            phi: psi.amplitudes().clone(),
            psi: psi.amplitudes().clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.phi.norm_squared() + self.psi.norm_squared()
    }

    /// `|phi><psi|`.
    pub fn dyad(&self) -> CMatrix {
        &self.phi * self.psi.adjoint()
    }

    fn to_slice(&self, out: &mut [C64]) {
        let d = self.dim();
        out[..d].copy_from_slice(self.phi.as_slice());
        out[d..2 * d].copy_from_slice(self.psi.as_slice());
    }

    fn from_slice(y: &[C64], d: usize) -> Self {
        Self {
            phi: DVector::from_column_slice(&y[..d]),
            psi: DVector::from_column_slice(&y[d..2 * d]),
        }
    }
}

/// `diag(top, bottom)` acting on `(phi, psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    pub top: CMatrix,
    pub bottom: CMatrix,
}

impl BlockOperator {
    pub fn apply(&self, theta: &DoubledState) -> DoubledState {
        DoubledState {
            phi: &self.top * &theta.phi,
            psi: &self.bottom * &theta.psi,
        }
    }

    fn norm_sqr_of(&self, phi: DVectorView<C64>, psi: DVectorView<C64>) -> f64 {
        (&self.top * phi).norm_squared() + (&self.bottom * psi).norm_squared()
    }
}

/// `F(t) = diag(A(t), B(t))` and `J_i(t) = diag(C_i(t), D_i(t))`.
pub fn block_operators(model: &TimeLocalModel, t: f64) -> Result<(BlockOperator, Vec<BlockOperator>)> {
    let ops = model.at(t)?;
    let f = BlockOperator { top: ops.a, bottom: ops.b };
    let j = ops
        .channels
        .into_iter()
        .map(|(c, d)| BlockOperator { top: c, bottom: d })
        .collect();
    Ok((f, j))
}

fn check_theta(theta: &DoubledState, d: usize) -> Result<f64> {
    check_dim("doubled state", d, theta.dim())?;
    check_dim("doubled state components", theta.phi.len(), theta.psi.len())?;
    let n2 = theta.norm_sqr();
    if !(n2 > MIN_NORM_SQR) {
        return Err(Error::ZeroVector);
    }
    Ok(n2)
}

/// `lambda_i = |J_i theta|^2 / |theta|^2`.
pub fn doubled_jump_rates(j_list: &[BlockOperator], theta: &DoubledState) -> Result<Vec<f64>> {
    let d = j_list.first().map_or(theta.dim(), |j| j.top.nrows());
    let n2 = check_theta(theta, d)?;
    Ok(rates_raw(j_list, theta.phi.as_view(), theta.psi.as_view(), n2))
}

fn rates_raw(j_list: &[BlockOperator], phi: DVectorView<C64>, psi: DVectorView<C64>, n2: f64) -> Vec<f64> {
    j_list.iter().map(|j| j.norm_sqr_of(phi, psi) / n2).collect()
}

/// `theta -> (|theta| / |J theta|) J theta`.
pub fn apply_doubled_jump(j: &BlockOperator, theta: &DoubledState) -> Result<DoubledState> {
    let n2 = check_theta(theta, j.top.nrows())?;
    let out = j.apply(theta);
    let m2 = out.norm_sqr();
    if !(m2.sqrt() > 1e-12) {
        return Err(Error::DarkState { norm: m2.sqrt() });
    }
    let s = C64::new((n2 / m2).sqrt(), 0.0);
    Ok(DoubledState {
        phi: out.phi * s,
        psi: out.psi * s,
    })
}

/// `F theta + 1/2 sum_i lambda_i theta`.
pub fn doubled_drift(f: &BlockOperator, j_list: &[BlockOperator], theta: &DoubledState) -> Result<DoubledState> {
    let n2 = check_theta(theta, f.top.nrows())?;
    let total: f64 = rates_raw(j_list, theta.phi.as_view(), theta.psi.as_view(), n2).iter().sum();
    let mut out = f.apply(theta);
    let half = C64::new(0.5 * total, 0.0);
    out.phi.axpy(half, &theta.phi, C64::new(1.0, 0.0));
    out.psi.axpy(half, &theta.psi, C64::new(1.0, 0.0));
    Ok(out)
}

/// How jump times are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpScheme {
    /// The per-channel rate integrals are integrated alongside the drift and a
    /// jump fires when their sum crosses an `Exp(1)` threshold.
    RateIntegral,
    /// Fixed steps with `sum_i lambda_i dt <= max_rate_step` and `dt <= dt_max`;
    /// each step fires at most one jump with probability `sum_i lambda_i dt`.
    Bernoulli { max_rate_step: f64, dt_max: f64 },
}

impl Default for JumpScheme {
    fn default() -> Self {
        JumpScheme::RateIntegral
    }
}

impl JumpScheme {
    pub fn bernoulli() -> Self {
        JumpScheme::Bernoulli {
            max_rate_step: 1e-3,
            dt_max: 1e-2,
        }
    }
}

/// One realization of the doubled process.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubledRecord {
    pub sample_times: Vec<f64>,
    pub states: Vec<DoubledState>,
    /// `(time, channel)` in ascending time order.
    pub jump_log: Vec<(f64, usize)>,
    /// `int lambda_i dt` over the whole trajectory, per channel.
    pub rate_integrals: Vec<f64>,
}

impl DoubledRecord {
    pub fn jumps_until(&self, t: f64) -> usize {
        self.jump_log.partition_point(|&(tj, _)| tj <= t)
    }
}

fn check_model_grid(model: &TimeLocalModel, theta0: &DoubledState, t_grid: &[f64]) -> Result<()> {
    check_theta(theta0, model.dim())?;
    check_grid(t_grid)?;
    model.check_time(t_grid[0])?;
    model.check_time(t_grid[t_grid.len() - 1])
}

pub fn sample_doubled_trajectory(
    model: &TimeLocalModel,
    theta0: &DoubledState,
    t_grid: &[f64],
    stream: RngStream,
    scheme: JumpScheme,
) -> Result<DoubledRecord> {
    sample_doubled_trajectory_with(model, theta0, t_grid, &mut stream.rng(), scheme)
}

pub fn sample_doubled_trajectory_with<R: Rng + ?Sized>(
    model: &TimeLocalModel,
    theta0: &DoubledState,
    t_grid: &[f64],
    rng: &mut R,
    scheme: JumpScheme,
) -> Result<DoubledRecord> {
    check_model_grid(model, theta0, t_grid)?;
    match scheme {
        JumpScheme::RateIntegral => sample_rate_integral(model, theta0, t_grid, rng),
        JumpScheme::Bernoulli { max_rate_step, dt_max } => {
            if !(max_rate_step > 0.0 && dt_max > 0.0) {
                return Err(Error::InvalidArgument("Bernoulli step bounds must be positive".into()));
            }
            sample_bernoulli(model, theta0, t_grid, max_rate_step, dt_max, rng)
        }
    }
}

fn sample_rate_integral<R: Rng + ?Sized>(
    model: &TimeLocalModel,
    theta0: &DoubledState,
    t_grid: &[f64],
    rng: &mut R,
) -> Result<DoubledRecord> {
    let d = model.dim();
    let n_ch = model.channels().len();
    let t_end = model.interval().1;
    let failure = std::cell::RefCell::new(None);
    // State layout: phi (d), psi (d), then one rate integral per channel in the real part.
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
        let ops = match block_operators(model, t.min(t_end)) {
            Ok(ops) => ops,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                dy.fill(C64::new(f64::NAN, 0.0));
                return;
            }
        };
        let (f, j) = ops;
        let phi = DVectorView::from_slice(&y[..d], d);
        let psi = DVectorView::from_slice(&y[d..2 * d], d);
        let n2 = phi.norm_squared() + psi.norm_squared();
        let rates = rates_raw(&j, phi, psi, n2);
        let half = C64::new(0.5 * rates.iter().sum::<f64>(), 0.0);
        let dphi = &f.top * phi + phi * half;
        let dpsi = &f.bottom * psi + psi * half;
        dy[..d].copy_from_slice(dphi.as_slice());
        dy[d..2 * d].copy_from_slice(dpsi.as_slice());
        for (k, r) in rates.iter().enumerate() {
            dy[2 * d + k] = C64::new(*r, 0.0);
        }
    };
    let mut y0 = vec![C64::new(0.0, 0.0); 2 * d + n_ch];
    theta0.to_slice(&mut y0);
    let t0 = t_grid[0];
    let time_tol = 1e-9 * (t_grid[t_grid.len() - 1] - t0).max(f64::MIN_POSITIVE);
    let mut stepper = Dopri5::new(rhs, t0, y0, Tolerances::default());
    let total_integral = |y: &[C64]| y[2 * d..].iter().map(|z| z.re).sum::<f64>();
    let mut threshold = -open_unit(rng).ln();
    let mut base = 0.0;
    let mut states = vec![theta0.clone()];
    let mut jump_log = Vec::new();
    let mut buf = vec![C64::new(0.0, 0.0); 2 * d + n_ch];

    for &target in &t_grid[1..] {
        while stepper.t() < target {
            let stepped = stepper.step(target);
            if let Some(e) = failure.borrow_mut().take() {
                return Err(e);
            }
            stepped?;
            if total_integral(stepper.y()) - base < threshold {
                continue;
            }
            let (mut lo, mut hi) = stepper.last_step();
            while hi - lo > time_tol {
                let mid = 0.5 * (lo + hi);
                stepper.dense(mid, &mut buf);
                if total_integral(&buf) - base < threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tau = hi.min(stepper.t());
            stepper.dense(tau, &mut buf);
            let theta = DoubledState::from_slice(&buf, d);
            let (_, j) = block_operators(model, tau)?;
            let rates = rates_raw(&j, theta.phi.as_view(), theta.psi.as_view(), theta.norm_sqr());
            if let Some(i) = choose_channel(&rates, rng.random()) {
                let post = apply_doubled_jump(&j[i], &theta)?;
                post.to_slice(&mut buf);
                jump_log.push((tau, i));
            }
            base = total_integral(&buf);
            threshold = -open_unit(rng).ln();
            stepper.reset(tau, &buf);
        }
        states.push(DoubledState::from_slice(stepper.y(), d));
    }
    let rate_integrals = stepper.y()[2 * d..].iter().map(|z| z.re).collect();
    Ok(DoubledRecord {
        sample_times: t_grid.to_vec(),
        states,
        jump_log,
        rate_integrals,
    })
}

fn sample_bernoulli<R: Rng + ?Sized>(
    model: &TimeLocalModel,
    theta0: &DoubledState,
    t_grid: &[f64],
    max_rate_step: f64,
    dt_max: f64,
    rng: &mut R,
) -> Result<DoubledRecord> {
    let d = model.dim();
    let n_ch = model.channels().len();
    let stack = |theta: &DoubledState| {
        let mut v = DVector::zeros(2 * d);
        theta.to_slice(v.as_mut_slice());
        v
    };
    let mut theta = theta0.clone();
    let mut t = t_grid[0];
    let mut states = vec![theta0.clone()];
    let mut jump_log = Vec::new();
    let mut rate_integrals = vec![0.0; n_ch];
    for &target in &t_grid[1..] {
        while t < target {
            let (_, j) = block_operators(model, t)?;
            let rates = rates_raw(&j, theta.phi.as_view(), theta.psi.as_view(), theta.norm_sqr());
            let total: f64 = rates.iter().sum();
            let h = dt_max
                .min(if total > 0.0 { max_rate_step / total } else { f64::INFINITY })
                .min(target - t);
            for (acc, r) in rate_integrals.iter_mut().zip(&rates) {
                *acc += r * h;
            }
            let u: f64 = rng.random();
            if u < total * h {
                let i = choose_channel(&rates, u / (total * h)).expect("positive total rate");
                theta = apply_doubled_jump(&j[i], &theta)?;
                jump_log.push((t, i));
            }
            let (f, j) = block_operators(model, (t + 0.5 * h).min(model.interval().1))?;
            let drift = |y: &CVector| -> CVector {
                let phi = y.rows(0, d);
                let psi = y.rows(d, d);
                let n2 = phi.norm_squared() + psi.norm_squared();
                let half = C64::new(0.5 * rates_raw(&j, phi, psi, n2).iter().sum::<f64>(), 0.0);
                let mut out = DVector::zeros(2 * d);
                out.rows_mut(0, d).copy_from(&(&f.top * phi + phi * half));
                out.rows_mut(d, d).copy_from(&(&f.bottom * psi + psi * half));
                out
            };
            let next = rk4(drift, &stack(&theta), h);
            theta = DoubledState::from_slice(next.as_slice(), d);
            if !(theta.norm_sqr() > MIN_NORM_SQR) || !theta.norm_sqr().is_finite() {
                return Err(Error::Integrator {
                    t,
                    step: h,
                    reason: "doubled state norm left the admissible range".into(),
                });
            }
            t = if target - (t + h) <= 1e-12 * target.abs().max(1.0) { target } else { t + h };
        }
        states.push(theta.clone());
    }
    Ok(DoubledRecord {
        sample_times: t_grid.to_vec(),
        states,
        jump_log,
        rate_integrals,
    })
}

/// Estimates `rho(t) = E[|phi(t)><psi(t)|]` from `n_traj` trajectories started
/// in `(psi0, psi0)`, with `psi0` drawn per trajectory for mixed initial states.
pub fn unravel_doubled_to_density(
    model: &TimeLocalModel,
    init: &InitialState,
    t_grid: &[f64],
    n_traj: usize,
    master_seed: u64,
    options: &UnravelOptions,
    scheme: JumpScheme,
) -> Result<Vec<EnsembleStatistics>> {
    if n_traj < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 trajectories required, got {n_traj}")));
    }
    let d = model.dim();
    check_dim("initial state", d, init.dim())?;
    for a in &options.observables {
        check_dim("observable", d, a.dim_rows())?;
        check_dim("observable", d, a.dim_cols())?;
    }
    check_grid(t_grid)?;
    let work = |range: std::ops::Range<usize>| {
        let mut acc = TrajectoryAccumulator::new(t_grid, d, options.observables.len());
        for k in range {
            let mut rng = RngStream::new(master_seed, k as u64).rng();
            let theta0 = DoubledState::symmetric(&init.sample(&mut rng));
            let record = sample_doubled_trajectory_with(model, &theta0, t_grid, &mut rng, scheme)?;
            for (i, (t, theta)) in record.sample_times.iter().zip(&record.states).enumerate() {
                acc.push_pair(i, &theta.phi, &theta.psi, &options.observables, record.jumps_until(*t) as u64);
            }
        }
        Ok(acc)
    };
    let acc = run_chunked(n_traj, options.threads, work, |a, b| a.merge(&b))?.expect("n_traj >= 2");
    Ok(acc.finish())
}
