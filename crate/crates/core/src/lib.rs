//! Open quantum system dynamics: exact system-environment evolution, Lindblad
//! and time-local master equations, indirect measurements, and stochastic
//! unravelings in the system and doubled Hilbert spaces.

pub mod ensemble;
pub mod error;
pub mod fixtures;
pub mod hnm;
pub mod lindblad;
pub mod mcwf;
pub mod micro;
pub mod ode;
pub mod qops;
pub mod qstate;
pub mod superop;
pub mod tcl;

pub use error::{Error, Result};
pub use qstate::{ComplexMatrix, DensityMatrix, HermitianOperator, StateVector, C64};
