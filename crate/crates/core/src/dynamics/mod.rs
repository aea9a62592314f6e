//! Step-II dynamics: Lindblad integration, the exact two-photon-loss
//! propagator, homodyne-monitored trajectories and the three-mode model.

pub mod branches;
pub mod lindblad;
pub mod params;
pub mod parity;
pub mod sme;
pub mod three_mode;
pub mod two_photon;

pub use lindblad::{evolve_lindblad, evolve_superoperator, lindblad_rhs, Drift, Jump, Lindbladian, Rk4};
pub use params::{Model, ProtocolParams, Strictness};
pub use two_photon::{quasi_steady_state, QssOptions, QuasiSteadyState, TwoPhotonPropagator};
pub use sme::{evolve_sme_homodyne, residual_lindbladian, evolve_sse_homodyne, MonitoredChannel, SmeOutput, TimeGrid};
pub use branches::{evolve_branches_density, evolve_branches_pure, BranchDensity, BranchPure, BranchState};
pub use three_mode::{compare_adiabatic_elimination, evolve_full_three_mode, EliminationComparison, ThreeModeOutcome, ThreeModeRun};
pub use parity::{parity_verdict, GaussianMixture, MatchedFilter, Verdict};
