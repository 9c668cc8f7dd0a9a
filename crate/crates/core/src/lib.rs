//! Simulation and verification toolkit for line ensembles of non-crossing
//! random walk bridges above a hard wall, where curve `i` (counting from the
//! top, starting at zero) carries an area tilt `(a/N) * b^i`.
//!
//! The crate is organised bottom-up:
//!
//! * [`increments`]: increment laws given by a random walk Hamiltonian,
//!   exponential tilting and ε-discretisation.
//! * [`ensemble`]: configurations, states, the area functional and
//!   log-weight, vertical shifts, scale constants, ceiling functions and
//!   the 1:2:3 rescaling.
//! * [`sampler`]: single-site Glauber dynamics, reproducible streams and
//!   the shared-randomness monotone coupling.
//! * [`oracle`]: exact transfer-table computations on small instances.
//! * [`stats`]: Monte Carlo estimators and experiment-level statistics.
//! * [`experiments`]: the verification suites built on top of the above.
//!
//! Heights are stored as integers in units of the model's grid step, so the
//! lattice case and ε-discretised nonlattice models share one code path.

pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod increments;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use ensemble::{EnsembleConfig, EnsembleState, LogWeight};
pub use error::{Error, Result};
pub use increments::IncrementModel;
pub use oracle::OracleTable;
pub use sampler::{Chain, MoveProposal, SampleSet};
pub use stats::SurvivalCurve;
