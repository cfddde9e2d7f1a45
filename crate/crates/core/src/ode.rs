//! Adaptive Dormand–Prince 5(4) integrator for complex-valued ODE systems,
//! with the standard fourth-order continuous extension for dense output.

use crate::error::{Error, Result};
use crate::qstate::C64;

/// Error tolerances for the adaptive step controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const MAX_STEPS: usize = 10_000_000;

/// Dormand–Prince stepper. `rhs(t, y, dy)` writes the derivative into `dy`.
pub struct Dopri5<F> {
    rhs: F,
    tol: Tolerances,
    t: f64,
    y: Vec<C64>,
    h: f64,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    y_new: Vec<C64>,
    // Dense-output polynomial of the last accepted step.
    t_old: f64,
    h_old: f64,
    cont: [Vec<C64>; 5],
    steps: usize,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    pub fn new(mut rhs: F, t0: f64, y0: Vec<C64>, tol: Tolerances) -> Self {
        let n = y0.len();
        let mut k: [Vec<C64>; 7] = std::array::from_fn(|_| vec![C64::default(); n]);
        rhs(t0, &y0, &mut k[0]);
        let mut s = Self {
            rhs,
            tol,
            t: t0,
            y: y0,
            h: 0.0,
            k,
            tmp: vec![C64::default(); n],
            y_new: vec![C64::default(); n],
            t_old: t0,
            h_old: 0.0,
            cont: std::array::from_fn(|_| vec![C64::default(); n]),
            steps: 0,
        };
        s.h = s.initial_step();
        s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    pub fn last_step(&self) -> (f64, f64) {
        (self.t_old, self.t_old + self.h_old)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.y.len().max(1) as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for (y, f) in self.y.iter().zip(&self.k[0]) {
            let sc = self.tol.atol + self.tol.rtol * y.norm();
            d0 += (y.norm() / sc).powi(2);
            d1 += (f.norm() / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..self.y.len() {
            self.tmp[i] = self.y[i] + self.k[0][i] * h0;
        }
        (self.rhs)(self.t + h0, &self.tmp, &mut self.k[1]);
        let mut d2 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.tol.atol + self.tol.rtol * self.y[i].norm();
            d2 += ((self.k[1][i] - self.k[0][i]).norm() / sc).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }

    /// Takes one accepted step, never passing `t_limit`. Returns the new time.
    pub fn step(&mut self, t_limit: f64) -> Result<f64> {
        if t_limit <= self.t {
            return Ok(self.t);
        }
        let n = self.y.len();
        loop {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::Integrator {
                    t: self.t,
                    step: self.h,
                    reason: "maximum number of steps exceeded".into(),
                });
            }
            let remaining = t_limit - self.t;
            let mut h = self.h.min(remaining);
            // Avoid leaving a sliver of a step before the limit.
            if remaining - h < 1e-3 * h {
                h = remaining;
            }
            if h <= 1e-14 * self.t.abs().max(1.0) {
                if h == remaining {
                    // The limit is within rounding of the current time.
                    self.t = t_limit;
                    return Ok(self.t);
                }
                return Err(Error::Integrator {
                    t: self.t,
                    step: h,
                    reason: "step size underflow".into(),
                });
            }
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let tmp = &mut self.tmp;

            for i in 0..n {
                tmp[i] = y[i] + k1[i] * (h * A21);
            }
            (self.rhs)(t + C2 * h, tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
            }
            (self.rhs)(t + C3 * h, tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
            }
            (self.rhs)(t + C4 * h, tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
            }
            (self.rhs)(t + C5 * h, tmp, k5);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
            }
            (self.rhs)(t + h, tmp, k6);
            for i in 0..n {
                self.y_new[i] =
                    y[i] + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h;
            }
            (self.rhs)(t + h, &self.y_new, k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
                let sc = self.tol.atol + self.tol.rtol * y[i].norm().max(self.y_new[i].norm());
                err += (e.norm() / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                self.h = h * 0.1;
                continue;
            }
            let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
            if err <= 1.0 {
                for i in 0..n {
                    let dy = self.y_new[i] - y[i];
                    let bspl = k1[i] * h - dy;
                    self.cont[0][i] = y[i];
                    self.cont[1][i] = dy;
                    self.cont[2][i] = bspl;
                    self.cont[3][i] = dy - k7[i] * h - bspl;
                    self.cont[4][i] =
                        (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
                }
                std::mem::swap(&mut self.y, &mut self.y_new);
                let (first, rest) = self.k.split_at_mut(1);
                std::mem::swap(&mut first[0], &mut rest[5]);
                self.t_old = t;
                self.h_old = h;
                self.t = if h == remaining { t_limit } else { t + h };
                if h >= self.h {
                    self.h = h * fac;
                }
                return Ok(self.t);
            }
            self.h = h * fac.min(1.0);
        }
    }

    /// Dense output inside the last accepted step.
    pub fn dense(&self, t: f64, out: &mut [C64]) {
        let theta = if self.h_old > 0.0 { (t - self.t_old) / self.h_old } else { 1.0 };
        let theta1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.cont[0][i]
                + (self.cont[1][i]
                    + (self.cont[2][i] + (self.cont[3][i] + self.cont[4][i] * theta1) * theta) * theta1)
                    * theta;
        }
    }

    /// Integrates up to `t_end` exactly.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }

    /// Restarts from a new state at the current time (e.g. after a discontinuity).
    pub fn reset(&mut self, t: f64, y: &[C64]) {
        self.t = t;
        self.y.copy_from_slice(y);
        (self.rhs)(t, &self.y, &mut self.k[0]);
        self.h_old = 0.0;
        self.t_old = t;
        let h = self.h;
        self.h = self.initial_step().min(if h > 0.0 { h } else { f64::INFINITY });
    }

    /// Multiplies the state by `factor`. Only valid for a linear homogeneous right-hand side.
    pub fn rescale(&mut self, factor: f64) {
        for v in self.y.iter_mut().chain(self.k[0].iter_mut()).chain(self.cont.iter_mut().flatten()) {
            *v *= factor;
        }
    }

    pub fn into_state(self) -> Vec<C64> {
        self.y
    }
}

/// Integrates `rhs` from `grid[0]`, returning the solution at every grid point.
pub fn integrate_grid<F>(rhs: F, y0: Vec<C64>, grid: &[f64], tol: Tolerances) -> Result<Vec<Vec<C64>>>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    check_grid(grid)?;
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0.clone());
    let mut stepper = Dopri5::new(rhs, grid[0], y0, tol);
    for &t in &grid[1..] {
        stepper.advance_to(t)?;
        out.push(stepper.y().to_vec());
    }
    Ok(out)
}

/// A time grid must be non-empty, finite and strictly ascending.
pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidTime("empty time grid".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidTime("non-finite time in grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTime("time grid must be strictly ascending".into()));
    }
    Ok(())
}

/// `n_steps + 1` equally spaced points on `[0, t_max]`.
pub fn uniform_grid(t_max: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps).map(|k| t_max * k as f64 / n_steps as f64).collect()
}
