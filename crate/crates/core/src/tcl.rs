//! Time-local master equations
//!
//! ```text
//! d rho/dt = A(t) rho + rho B(t)^dag + sum_i C_i(t) rho D_i(t)^dag
//! ```
//!
//! with time-dependent operators that need not combine into Lindblad form.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lindblad::LindbladModel;
use crate::ode::{check_grid, integrate_grid, Tolerances};
use crate::qstate::{check_dim, CMatrix, ComplexMatrix, DensityMatrix, C64};
use crate::superop::Superoperator;

/// Condition number above which the propagated flow map counts as singular.
pub const INVERTIBILITY_THRESHOLD: f64 = 1e12;

/// Built-in scalar time profiles `f(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeProfile {
    /// `c`
    Constant(f64),
    /// `amp sin(omega t + phase)`
    Sin { amp: f64, omega: f64, phase: f64 },
    /// `amp cos(omega t + phase)`
    Cos { amp: f64, omega: f64, phase: f64 },
    /// `offset + amp sin(omega t)`
    OffsetSin { offset: f64, amp: f64, omega: f64 },
    /// `sqrt(max(0, offset + amp sin(omega t)))`
    SqrtOffsetSin { offset: f64, amp: f64, omega: f64 },
    /// `exp(rate t)`
    Exp { rate: f64 },
    /// `tanh(rate t)`
    Tanh { rate: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant(c) => c,
            TimeProfile::Sin { amp, omega, phase } => amp * (omega * t + phase).sin(),
            TimeProfile::Cos { amp, omega, phase } => amp * (omega * t + phase).cos(),
            TimeProfile::OffsetSin { offset, amp, omega } => offset + amp * (omega * t).sin(),
            TimeProfile::SqrtOffsetSin { offset, amp, omega } => (offset + amp * (omega * t).sin()).max(0.0).sqrt(),
            TimeProfile::Exp { rate } => (rate * t).exp(),
            TimeProfile::Tanh { rate } => (rate * t).tanh(),
        }
    }

    fn name_and_params(&self) -> (&'static str, Vec<f64>) {
        match *self {
            TimeProfile::Constant(c) => ("const", vec![c]),
            TimeProfile::Sin { amp, omega, phase } => ("sin", vec![amp, omega, phase]),
            TimeProfile::Cos { amp, omega, phase } => ("cos", vec![amp, omega, phase]),
            TimeProfile::OffsetSin { offset, amp, omega } => ("offset_sin", vec![offset, amp, omega]),
            TimeProfile::SqrtOffsetSin { offset, amp, omega } => ("sqrt_offset_sin", vec![offset, amp, omega]),
            TimeProfile::Exp { rate } => ("exp", vec![rate]),
            TimeProfile::Tanh { rate } => ("tanh", vec![rate]),
        }
    }
}

impl fmt::Display for TimeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, params) = self.name_and_params();
        let params: Vec<String> = params.iter().map(|p| format!("{p:?}")).collect();
        write!(f, "{name}({})", params.join(", "))
    }
}

impl FromStr for TimeProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "unknown scalar profile '{s}' (expected const(c), sin(amp, omega[, phase]), \
                 cos(amp, omega[, phase]), offset_sin(offset, amp, omega), \
                 sqrt_offset_sin(offset, amp, omega), exp(rate) or tanh(rate))"
            ))
        };
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = s[..open].trim();
        let inner = &s[open + 1..s.len() - 1];
        let params = if inner.trim().is_empty() {
            Vec::new()
        } else {
            inner
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<f64>>>()?
        };
        let arity = |n: usize| if params.len() == n { Ok(()) } else { Err(bad()) };
        let profile = match name {
            "const" => {
                arity(1)?;
                TimeProfile::Constant(params[0])
            }
            "sin" | "cos" => {
                if params.len() != 2 && params.len() != 3 {
                    return Err(bad());
                }
                let (amp, omega, phase) = (params[0], params[1], params.get(2).copied().unwrap_or(0.0));
                if name == "sin" {
                    TimeProfile::Sin { amp, omega, phase }
                } else {
                    TimeProfile::Cos { amp, omega, phase }
                }
            }
            "offset_sin" => {
                arity(3)?;
                TimeProfile::OffsetSin {
                    offset: params[0],
                    amp: params[1],
                    omega: params[2],
                }
            }
            "sqrt_offset_sin" => {
                arity(3)?;
                TimeProfile::SqrtOffsetSin {
                    offset: params[0],
                    amp: params[1],
                    omega: params[2],
                }
            }
            "exp" => {
                arity(1)?;
                TimeProfile::Exp { rate: params[0] }
            }
            "tanh" => {
                arity(1)?;
                TimeProfile::Tanh { rate: params[0] }
            }
            _ => return Err(bad()),
        };
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad());
        }
        Ok(profile)
    }
}

/// An operator-valued function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeIndexed {
    Constant(ComplexMatrix),
    /// Uniform grid `times` with one matrix per node, linearly interpolated.
    Table {
        times: Vec<f64>,
        matrices: Vec<ComplexMatrix>,
    },
    /// `matrix * scalar(t)`.
    Profile {
        matrix: ComplexMatrix,
        scalar: TimeProfile,
    },
}

impl TimeIndexed {
    pub fn zeros(d: usize) -> Self {
        TimeIndexed::Constant(ComplexMatrix::zeros(d, d))
    }

    pub fn table(times: Vec<f64>, matrices: Vec<ComplexMatrix>) -> Result<Self> {
        if times.len() < 2 || times.len() != matrices.len() {
            return Err(Error::InvalidArgument(format!(
                "operator table needs at least two nodes and one matrix per node ({} times, {} matrices)",
                times.len(),
                matrices.len()
            )));
        }
        check_grid(&times)?;
        let step = times[1] - times[0];
        for (k, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!("operator table grid is not uniform at node {}", k + 1)));
            }
        }
        let (r, c) = (matrices[0].dim_rows(), matrices[0].dim_cols());
        for m in &matrices {
            check_dim("operator table entry", r, m.dim_rows())?;
            check_dim("operator table entry", c, m.dim_cols())?;
        }
        Ok(TimeIndexed::Table { times, matrices })
    }

    pub fn shape(&self) -> (usize, usize) {
        let m = match self {
            TimeIndexed::Constant(m) => m,
            TimeIndexed::Table { matrices, .. } => &matrices[0],
            TimeIndexed::Profile { matrix, .. } => matrix,
        };
        (m.dim_rows(), m.dim_cols())
    }

    /// Closed interval on which the operator is defined.
    pub fn interval(&self) -> (f64, f64) {
        match self {
            TimeIndexed::Table { times, .. } => (times[0], times[times.len() - 1]),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn eval(&self, t: f64) -> Result<CMatrix> {
        match self {
            TimeIndexed::Constant(m) => Ok(m.as_mat().clone()),
            TimeIndexed::Profile { matrix, scalar } => Ok(matrix.as_mat() * C64::new(scalar.eval(t), 0.0)),
            TimeIndexed::Table { times, matrices } => {
                let (t0, t1) = (times[0], times[times.len() - 1]);
                if !(t >= t0 && t <= t1) {
                    return Err(Error::InvalidTime(format!("t = {t} outside operator table [{t0}, {t1}]")));
                }
                let step = (t1 - t0) / (times.len() - 1) as f64;
                let k = (((t - t0) / step).floor() as usize).min(times.len() - 2);
                let frac = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
                Ok(matrices[k].as_mat() * C64::new(1.0 - frac, 0.0) + matrices[k + 1].as_mat() * C64::new(frac, 0.0))
            }
        }
    }
}

/// One channel `(C_i, D_i)` of the time-local generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeLocalChannel {
    pub c: TimeIndexed,
    pub d: TimeIndexed,
}

/// The operator quadruple `A(t), B(t), {C_i(t), D_i(t)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeLocalModel {
    a: TimeIndexed,
    b: TimeIndexed,
    channels: Vec<TimeLocalChannel>,
    dim: usize,
    interval: (f64, f64),
}

/// Operators evaluated at one instant.
#[derive(Debug, Clone)]
pub struct InstantOperators {
    pub a: CMatrix,
    pub b: CMatrix,
    pub channels: Vec<(CMatrix, CMatrix)>,
}

impl TimeLocalModel {
    pub fn new(a: TimeIndexed, b: TimeIndexed, channels: Vec<TimeLocalChannel>) -> Result<Self> {
        let (d, cols) = a.shape();
        check_dim("time-local operator A", d, cols)?;
        let mut interval = (f64::NEG_INFINITY, f64::INFINITY);
        let all = std::iter::once(&a)
            .chain(std::iter::once(&b))
            .chain(channels.iter().flat_map(|ch| [&ch.c, &ch.d]));
        for op in all {
            let (r, c) = op.shape();
            check_dim("time-local operator", d, r)?;
            check_dim("time-local operator", d, c)?;
            let (lo, hi) = op.interval();
            interval = (interval.0.max(lo), interval.1.min(hi));
        }
        if interval.0 > interval.1 {
            return Err(Error::InvalidArgument("operator tables have disjoint time ranges".into()));
        }
        Ok(Self {
            a,
            b,
            channels,
            dim: d,
            interval,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> &TimeIndexed {
        &self.a
    }

    pub fn b(&self) -> &TimeIndexed {
        &self.b
    }

    pub fn channels(&self) -> &[TimeLocalChannel] {
        &self.channels
    }

    /// Common interval on which every operator is defined.
    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// `B = A` and `D_i = C_i` structurally.
    pub fn is_symmetric(&self) -> bool {
        self.a == self.b && self.channels.iter().all(|ch| ch.c == ch.d)
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.interval;
        if t.is_finite() && t >= lo && t <= hi {
            Ok(())
        } else {
            Err(Error::InvalidTime(format!("t = {t} outside the model interval [{lo}, {hi}]")))
        }
    }

    pub fn at(&self, t: f64) -> Result<InstantOperators> {
        self.check_time(t)?;
        Ok(InstantOperators {
            a: self.a.eval(t)?,
            b: self.b.eval(t)?,
            channels: self
                .channels
                .iter()
                .map(|ch| Ok((ch.c.eval(t)?, ch.d.eval(t)?)))
                .collect::<Result<_>>()?,
        })
    }

    /// Largest `|tr[A rho + rho B^dag + sum C rho D^dag]|` over the operator
    /// `A + B^dag + sum D^dag C` at the sampled times, i.e. the worst trace
    /// violation for any unit-norm `rho`.
    pub fn trace_witness(&self, times: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &t in times {
            let ops = self.at(t)?;
            let mut m = &ops.a + ops.b.adjoint();
            for (c, d) in &ops.channels {
                m += d.adjoint() * c;
            }
            worst = worst.max(m.clone().svd(false, false).singular_values.max());
        }
        Ok(worst)
    }

    /// Generator superoperator at time `t` (column stacking).
    pub fn superoperator(&self, t: f64) -> Result<Superoperator> {
        let ops = self.at(t)?;
        let d = self.dim;
        let id = DMatrix::identity(d, d);
        let mut l = id.kronecker(&ops.a) + ops.b.conjugate().kronecker(&id);
        for (c, dd) in &ops.channels {
            l += dd.conjugate().kronecker(c);
        }
        Ok(Superoperator::from_raw(l, d))
    }
}

impl InstantOperators {
    fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let mut out = &self.a * rho + rho * self.b.adjoint();
        for (c, d) in &self.channels {
            out += c * rho * d.adjoint();
        }
        out
    }
}

/// `A(t) rho + rho B(t)^dag + sum_i C_i(t) rho D_i(t)^dag`.
pub fn timelocal_rhs(model: &TimeLocalModel, rho: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    check_dim("timelocal_rhs", model.dim(), rho.dim_rows())?;
    check_dim("timelocal_rhs", model.dim(), rho.dim_cols())?;
    ComplexMatrix::new(model.at(t)?.rhs(rho.as_mat()))
}

/// Rewrites a Lindblad model as `A = B = -iH - 1/2 sum gamma A^dag A`, `C_i = D_i = sqrt(gamma_i) A_i`.
pub fn embed_lindblad(model: &LindbladModel) -> TimeLocalModel {
    let g = TimeIndexed::Constant(ComplexMatrix::new(model.effective_generator().clone()).expect("finite generator"));
    let channels = model
        .channels()
        .iter()
        .map(|ch| {
            let c = TimeIndexed::Constant(&ch.op * ch.gamma.sqrt());
            TimeLocalChannel { c: c.clone(), d: c }
        })
        .collect();
    TimeLocalModel::new(g.clone(), g, channels).expect("dimensions already validated")
}

/// Solves the time-local master equation on `t_grid`.
///
/// Outputs are returned as raw matrices: the generator need not be of
/// Lindblad form, so positivity is not guaranteed.
pub fn integrate_timelocal(model: &TimeLocalModel, rho0: &DensityMatrix, t_grid: &[f64]) -> Result<Vec<ComplexMatrix>> {
    integrate_timelocal_matrix(model, rho0.matrix(), t_grid)
}

/// As [`integrate_timelocal`] from an arbitrary initial matrix (used for linearity checks).
pub fn integrate_timelocal_matrix(
    model: &TimeLocalModel,
    rho0: &ComplexMatrix,
    t_grid: &[f64],
) -> Result<Vec<ComplexMatrix>> {
    check_dim("integrate_timelocal", model.dim(), rho0.dim_rows())?;
    check_grid(t_grid)?;
    model.check_time(t_grid[0])?;
    model.check_time(t_grid[t_grid.len() - 1])?;
    let d = model.dim();
    let mut failure = None;
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
        // The stepper may probe slightly past the last grid point only by rounding.
        let t = t.min(model.interval.1);
        match model.at(t) {
            Ok(ops) => dy.copy_from_slice(ops.rhs(&DMatrix::from_column_slice(d, d, y)).as_slice()),
            Err(e) => {
                failure.get_or_insert(e);
                dy.fill(C64::new(f64::NAN, 0.0));
            }
        }
    };
    let sol = integrate_grid(rhs, rho0.as_mat().as_slice().to_vec(), t_grid, Tolerances::default());
    if let Some(e) = failure {
        return Err(e);
    }
    sol?.into_iter()
        .map(|y| ComplexMatrix::new(DMatrix::from_column_slice(d, d, &y)))
        .collect()
}

/// Perturbative generator `K(t) = sum_{n=1}^{order} alpha^n K_n(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSeries {
    alpha: f64,
    terms: Vec<TimeIndexed>,
}

impl GeneratorSeries {
    /// `terms[n - 1]` holds the superoperator-valued `K_n(t)`.
    pub fn new(alpha: f64, terms: Vec<TimeIndexed>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("generator series needs at least one term".into()));
        }
        let (n, m) = terms[0].shape();
        let d = (n as f64).sqrt().round() as usize;
        if n != m || d * d != n {
            return Err(Error::InvalidArgument(format!("K_1 has shape {n}x{m}, expected d^2 x d^2")));
        }
        for term in &terms {
            let (r, c) = term.shape();
            check_dim("series term", n, r)?;
            check_dim("series term", n, c)?;
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("coupling alpha must be finite, got {alpha}")));
        }
        Ok(Self { alpha, terms })
    }

    pub fn order(&self) -> usize {
        self.terms.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            terms: self.terms.clone(),
        }
    }
}

/// `K(t)` assembled from a [`GeneratorSeries`].
#[derive(Debug, Clone)]
pub struct AssembledGenerator {
    series: GeneratorSeries,
    dim: usize,
}

impl AssembledGenerator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, t: f64) -> Result<Superoperator> {
        let n = self.dim * self.dim;
        let mut k = DMatrix::zeros(n, n);
        let mut power = 1.0;
        for term in &self.series.terms {
            power *= self.series.alpha;
            if power != 0.0 {
                k += term.eval(t)? * C64::new(power, 0.0);
            }
        }
        Ok(Superoperator::from_raw(k, self.dim))
    }
}

pub fn assemble_generator(series: &GeneratorSeries) -> Result<AssembledGenerator> {
    let n = series.terms.first().ok_or_else(|| Error::InvalidArgument("empty series".into()))?.shape().0;
    Ok(AssembledGenerator {
        series: series.clone(),
        dim: (n as f64).sqrt().round() as usize,
    })
}

/// Solves `d rho/dt = K(t) rho` for an assembled generator.
pub fn integrate_generator(
    generator: &AssembledGenerator,
    rho0: &ComplexMatrix,
    t_grid: &[f64],
) -> Result<Vec<ComplexMatrix>> {
    let d = generator.dim();
    check_dim("integrate_generator", d, rho0.dim_rows())?;
    check_grid(t_grid)?;
    let mut failure = None;
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| match generator.at(t) {
        Ok(k) => {
            let v = k.matrix().as_mat() * nalgebra::DVector::from_column_slice(y);
            dy.copy_from_slice(v.as_slice());
        }
        Err(e) => {
            failure.get_or_insert(e);
            dy.fill(C64::new(f64::NAN, 0.0));
        }
    };
    let sol = integrate_grid(rhs, rho0.as_mat().as_slice().to_vec(), t_grid, Tolerances::default());
    if let Some(e) = failure {
        return Err(e);
    }
    sol?.into_iter()
        .map(|y| ComplexMatrix::new(DMatrix::from_column_slice(d, d, &y)))
        .collect()
}

/// Conditioning of the propagated flow map at one grid time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowDiagnostic {
    pub t: f64,
    pub condition_number: f64,
    pub invertibility_loss: bool,
}

/// Propagates the flow map `Lambda(t)` with `d Lambda/dt = K(t) Lambda` and reports its
/// condition number at each grid time. A singular flow map means `rho(0)` can
/// no longer be recovered from `rho(t)`.
pub fn flow_map_diagnostics(model: &TimeLocalModel, t_grid: &[f64]) -> Result<Vec<FlowDiagnostic>> {
    check_grid(t_grid)?;
    model.check_time(t_grid[0])?;
    model.check_time(t_grid[t_grid.len() - 1])?;
    let n = model.dim() * model.dim();
    let mut failure = None;
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| match model.superoperator(t.min(model.interval.1)) {
        Ok(k) => {
            let lam = DMatrix::from_column_slice(n, n, y);
            dy.copy_from_slice((k.matrix().as_mat() * lam).as_slice());
        }
        Err(e) => {
            failure.get_or_insert(e);
            dy.fill(C64::new(f64::NAN, 0.0));
        }
    };
    let y0 = DMatrix::<C64>::identity(n, n).as_slice().to_vec();
    let sol = integrate_grid(rhs, y0, t_grid, Tolerances::default());
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(sol?
        .into_iter()
        .zip(t_grid)
        .map(|(y, &t)| {
            let sv = DMatrix::from_column_slice(n, n, &y).svd(false, false).singular_values;
            let (max, min) = (sv.max(), sv.min());
            let condition_number = if min > 0.0 { max / min } else { f64::INFINITY };
            FlowDiagnostic {
                t,
                condition_number,
                invertibility_loss: !(condition_number <= INVERTIBILITY_THRESHOLD),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lindblad::{integrate_master, lindblad_apply};
    use crate::ode::uniform_grid;
    use crate::qstate::{ops, HermitianOperator, StateVector};

    fn excited() -> DensityMatrix {
        DensityMatrix::pure(&StateVector::basis(2, 0).unwrap())
    }

    #[test]
    fn profile_parse_roundtrip() {
        for p in [
            TimeProfile::Constant(0.5),
            TimeProfile::Sin {
                amp: 1.0,
                omega: 2.0,
                phase: 0.25,
            },
            TimeProfile::SqrtOffsetSin {
                offset: 1.0,
                amp: 1.0,
                omega: 2.0,
            },
            TimeProfile::Exp { rate: -0.1 },
        ] {
            assert_eq!(p.to_string().parse::<TimeProfile>().unwrap(), p);
        }
        assert_eq!("sin(2, 3)".parse::<TimeProfile>().unwrap().eval(0.5), 2.0 * 1.5f64.sin());
        assert!("foo(1)".parse::<TimeProfile>().is_err());
        assert!("exp(1, 2)".parse::<TimeProfile>().is_err());
        assert!("exp(1".parse::<TimeProfile>().is_err());
    }

    #[test]
    fn zero_model_rhs_and_flow() {
        let m = TimeLocalModel::new(TimeIndexed::zeros(2), TimeIndexed::zeros(2), vec![]).unwrap();
        let rho = fixtures::random_density(2, 3);
        assert_eq!(timelocal_rhs(&m, rho.matrix(), 0.4).unwrap().max_abs(), 0.0);
        let out = integrate_timelocal(&m, &rho, &uniform_grid(2.0, 4)).unwrap();
        for r in out {
            assert_eq!(r.max_abs_diff(rho.matrix()), 0.0);
        }
    }

    #[test]
    fn commutator_form() {
        let h = ops::pauli_x().scale(C64::new(0.3, 0.0));
        let minus_ih = TimeIndexed::Constant(h.scale(C64::new(0.0, -1.0)));
        let m = TimeLocalModel::new(minus_ih.clone(), minus_ih, vec![]).unwrap();
        let rho = fixtures::random_density(2, 11);
        let out = timelocal_rhs(&m, rho.matrix(), 0.0).unwrap();
        let vn = crate::micro::von_neumann_rhs(&HermitianOperator::new(h).unwrap(), &rho).unwrap();
        assert!(out.max_abs_diff(&vn) < 1e-15);
    }

    #[test]
    fn lindblad_embedding_reproduces_generator() {
        for (k, model) in fixtures::lindblad_fleet().into_iter().enumerate() {
            let tl = embed_lindblad(&model);
            assert!(tl.is_symmetric());
            for seed in 0..3 {
                let rho = fixtures::random_density(model.dim(), 40 + 7 * k as u64 + seed);
                let a = timelocal_rhs(&tl, rho.matrix(), 0.7).unwrap();
                let b = lindblad_apply(&model, &rho).unwrap();
                assert!(a.max_abs_diff(&b) <= 1e-12 * (1.0 + b.max_abs()));
            }
            assert!(tl.trace_witness(&[0.0, 1.0]).unwrap() < 1e-12);
        }
        let empty = LindbladModel::new(HermitianOperator::zeros(2), vec![]).unwrap();
        let tl = embed_lindblad(&empty);
        assert_eq!(tl.at(0.0).unwrap().a.iter().map(|z| z.norm()).sum::<f64>(), 0.0);
        assert!(tl.channels().is_empty());
    }

    #[test]
    fn damped_qubit_embedding_blocks() {
        let tl = embed_lindblad(&fixtures::damped_qubit(1.0, 0.0));
        let ops_t = tl.at(0.0).unwrap();
        // A = B = -(gamma/2) |e><e|
        let expected = ops::projector(2, 0).scale(C64::new(-0.5, 0.0));
        assert!(crate::qstate::max_abs(&(&ops_t.a - expected.as_mat())) < 1e-15);
        assert_eq!(ops_t.a, ops_t.b);
    }

    #[test]
    fn embedding_matches_master_integration() {
        let model = fixtures::damped_qubit(1.0, 0.0);
        let grid = uniform_grid(5.0, 50);
        let tl = integrate_timelocal(&embed_lindblad(&model), &excited(), &grid).unwrap();
        let lb = integrate_master(&model, &excited(), &grid).unwrap();
        for ((t, a), b) in grid.iter().zip(&tl).zip(&lb) {
            assert!((a - b.matrix()).trace_norm() <= 1e-8);
            let exact = (-t).exp();
            assert!((a[(0, 0)].re - exact).abs() <= 1e-6 * exact);
        }
    }

    /// Composite Simpson rule, independent of the ODE integrator.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn time_dependent_rate_matches_quadrature() {
        let model = fixtures::tcl_time_dependent_qubit();
        let grid = uniform_grid(5.0, 50);
        let out = integrate_timelocal(&model, &excited(), &grid).unwrap();
        for (t, rho) in grid.iter().zip(&out) {
            let integral = simpson(|s| 1.0 + (2.0 * s).sin(), 0.0, *t, 2000);
            let exact = (-integral).exp();
            assert!((rho[(0, 0)].re - exact).abs() <= 1e-6 * exact, "t={t}");
        }
    }

    #[test]
    fn table_interpolation_and_interval() {
        let m0 = ops::pauli_z();
        let m1 = ops::pauli_x();
        let table = TimeIndexed::table(vec![0.0, 1.0, 2.0], vec![m0.clone(), m1.clone(), m0.clone()]).unwrap();
        let mid = table.eval(0.5).unwrap();
        let oracle = (m0.as_mat() + m1.as_mat()) * C64::new(0.5, 0.0);
        assert!(crate::qstate::max_abs(&(mid - oracle)) < 1e-15);
        assert!(table.eval(2.5).is_err());
        assert!(TimeIndexed::table(vec![0.0, 1.0, 3.0], vec![m0.clone(), m1.clone(), m0.clone()]).is_err());

        let model = TimeLocalModel::new(table.clone(), table, vec![]).unwrap();
        assert_eq!(model.interval(), (0.0, 2.0));
        assert!(timelocal_rhs(&model, excited().matrix(), 3.0).is_err());
        assert!(integrate_timelocal(&model, &excited(), &[0.0, 1.0, 2.5]).is_err());
    }

    #[test]
    fn flow_is_linear() {
        let model = fixtures::asymmetric_doubled();
        let grid = uniform_grid(3.0, 6);
        let r1 = fixtures::random_density(2, 5);
        let r2 = fixtures::random_density(2, 6);
        let lambda = 0.3;
        let mix = &(r1.matrix() * lambda) + &(r2.matrix() * (1.0 - lambda));
        let s1 = integrate_timelocal(&model, &r1, &grid).unwrap();
        let s2 = integrate_timelocal(&model, &r2, &grid).unwrap();
        let sm = integrate_timelocal_matrix(&model, &mix, &grid).unwrap();
        for k in 0..grid.len() {
            let combo = &(&s1[k] * lambda) + &(&s2[k] * (1.0 - lambda));
            assert!(sm[k].max_abs_diff(&combo) < 1e-9);
        }
        // Linearity of the right-hand side itself.
        let lhs = timelocal_rhs(&model, &mix, 0.4).unwrap();
        let rhs = &(&timelocal_rhs(&model, r1.matrix(), 0.4).unwrap() * lambda)
            + &(&timelocal_rhs(&model, r2.matrix(), 0.4).unwrap() * (1.0 - lambda));
        assert!(lhs.max_abs_diff(&rhs) < 1e-14);
    }

    #[test]
    fn symmetric_models_preserve_hermiticity_and_trace() {
        let model = fixtures::tcl_time_dependent_qubit();
        assert!(model.is_symmetric());
        let s = 1.0 / 2f64.sqrt();
        let plus = DensityMatrix::pure(&StateVector::from_slice(&[C64::new(s, 0.0), C64::new(0.0, s)]).unwrap());
        for rho in integrate_timelocal(&model, &plus, &uniform_grid(4.0, 20)).unwrap() {
            assert!(rho.hermiticity_deviation() <= 1e-8);
            assert!((rho.trace() - C64::new(1.0, 0.0)).norm() <= 1e-8);
        }
    }

    #[test]
    fn series_assembly() {
        let k1 = TimeIndexed::Constant(fixtures::damped_qubit(1.0, 0.0).superoperator().matrix().clone());
        let k2 = TimeIndexed::Profile {
            matrix: fixtures::driven_damped_qubit().superoperator().matrix().clone(),
            scalar: TimeProfile::Cos {
                amp: 1.0,
                omega: 1.0,
                phase: 0.0,
            },
        };
        assert!(GeneratorSeries::new(1.0, vec![]).is_err());

        let single = assemble_generator(&GeneratorSeries::new(1.0, vec![k1.clone()]).unwrap()).unwrap();
        let direct = Superoperator::new(ComplexMatrix::new(k1.eval(0.3).unwrap()).unwrap()).unwrap();
        assert_eq!(single.at(0.3).unwrap(), direct);

        let series = GeneratorSeries::new(0.0, vec![k1.clone(), k2.clone()]).unwrap();
        assert_eq!(assemble_generator(&series).unwrap().at(0.3).unwrap().matrix().max_abs(), 0.0);

        // K(2a) - 2K(a) = 2 a^2 K_2 isolates the quadratic term.
        let t = 0.8;
        let alpha = 0.35;
        let ka = assemble_generator(&series.with_alpha(alpha)).unwrap().at(t).unwrap();
        let k2a = assemble_generator(&series.with_alpha(2.0 * alpha)).unwrap().at(t).unwrap();
        let isolated = k2a.add(&ka.scale(-2.0)).unwrap();
        let oracle = k2.eval(t).unwrap() * C64::new(2.0 * alpha * alpha, 0.0);
        assert!(crate::qstate::max_abs(&(isolated.matrix().as_mat() - oracle)) < 1e-13);
    }

    #[test]
    fn generator_integration_matches_operator_form() {
        let model = fixtures::tcl_time_dependent_qubit();
        // Build K_1(t) as a table from the operator form; alpha = 1.
        let times = uniform_grid(2.0, 2000);
        let table = TimeIndexed::table(
            times.clone(),
            times.iter().map(|&t| model.superoperator(t).unwrap().matrix().clone()).collect(),
        )
        .unwrap();
        let generator = assemble_generator(&GeneratorSeries::new(1.0, vec![table]).unwrap()).unwrap();
        let grid = uniform_grid(2.0, 4);
        let a = integrate_generator(&generator, excited().matrix(), &grid).unwrap();
        let b = integrate_timelocal(&model, &excited(), &grid).unwrap();
        for (x, y) in a.iter().zip(&b) {
            // Linear interpolation error of the tabulated generator is O(h^2).
            assert!(x.max_abs_diff(y) < 1e-6);
        }
    }

    #[test]
    fn flow_map_conditioning() {
        let healthy = flow_map_diagnostics(&fixtures::tcl_time_dependent_qubit(), &uniform_grid(2.0, 4)).unwrap();
        assert!(healthy.iter().all(|d| !d.invertibility_loss));
        assert_eq!(healthy[0].condition_number, 1.0);

        // A projective collapse A = -k |e><e| at large k drives the map towards singularity.
        let collapse = TimeIndexed::Constant(ops::projector(2, 0).scale(C64::new(-20.0, 0.0)));
        let model = TimeLocalModel::new(collapse.clone(), collapse, vec![]).unwrap();
        let diag = flow_map_diagnostics(&model, &[0.0, 0.1, 1.0, 2.0]).unwrap();
        assert!(!diag[1].invertibility_loss);
        assert!(diag[3].invertibility_loss);
    }

    #[test]
    fn trace_witness_flags_non_preserving_models() {
        let a = TimeIndexed::Constant(ops::projector(2, 0).scale(C64::new(-1.0, 0.0)));
        let model = TimeLocalModel::new(a.clone(), a, vec![]).unwrap();
        assert!((model.trace_witness(&[0.0]).unwrap() - 2.0).abs() < 1e-14);
        assert!(fixtures::asymmetric_doubled().trace_witness(&[0.0, 1.0]).unwrap() < 1e-14);
    }
}
