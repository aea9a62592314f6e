//! Simulation of remote qubit entanglement by two-photon dissipation:
//! step-I state construction, Lindblad and homodyne-trajectory dynamics of
//! the two-photon loss channel, step-III quadrature projections, and
//! entanglement diagnostics over measurement-outcome space.

// `!(x > 0.0)` style checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod measurement;
pub mod metrics;
pub mod protocol;
pub mod qlinalg;
pub mod validation;

pub use error::{Error, Result};
