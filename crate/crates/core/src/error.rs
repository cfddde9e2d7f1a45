use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the state types and dynamics routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("dimension {dim} exceeds the configured cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("operator is not Hermitian: max |M - M^dag| = {deviation:e} exceeds tolerance {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("density matrix trace is {trace} (must be 1 within 1e-10)")]
    TraceNotUnit { trace: f64 },

    #[error("density matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositive { min_eigenvalue: f64 },

    #[error("state vector has norm {norm} (must be 1 within 1e-10)")]
    NotNormalized { norm: f64 },

    #[error("zero vector cannot be normalized or phase-fixed")]
    ZeroVector,

    #[error("weights sum to {sum} (must be 1 within 1e-12)")]
    WeightSum { sum: f64 },

    #[error("weight {index} is negative or non-finite: {weight}")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("decay rate gamma_{index} = {gamma} violates the nonnegativity invariant")]
    NegativeRate { index: usize, gamma: f64 },

    #[error("operator is not unitary: max |U^dag U - I| = {deviation:e}")]
    NotUnitary { deviation: f64 },

    #[error("measurement basis is not orthonormal: max deviation {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("Kraus operators are not complete: max |sum K^dag K - I| = {deviation:e}")]
    NotComplete { deviation: f64 },

    #[error("observable spectrum is degenerate: r_{first} == r_{second}")]
    DegenerateSpectrum { first: usize, second: usize },

    #[error("outcome {outcome} has probability {probability:e}; cannot condition on it")]
    ImpossibleOutcome { outcome: usize, probability: f64 },

    #[error("outcome index {index} out of range (operation has {count} outcomes)")]
    OutcomeOutOfRange { index: usize, count: usize },

    #[error("channel index {index} out of range ({count} channels)")]
    ChannelOutOfRange { index: usize, count: usize },

    #[error("jump requested from a dark state: |J psi| = {norm:e}")]
    DarkState { norm: f64 },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("invalid time: {0}")]
    InvalidTime(String),

    #[error("integrator failure at t = {t}: {reason} (step size {step:e})")]
    Integrator { t: f64, step: f64, reason: String },

    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures of the numerical routines, as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integrator { .. } | Error::DarkState { .. } | Error::ImpossibleOutcome { .. }
        )
    }
}
