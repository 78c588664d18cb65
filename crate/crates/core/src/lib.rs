//! Shield-MPPI: sampling-based model predictive control with a two-layer
//! discrete-time control barrier function shield.
//!
//! Layer one adds a DCBF penalty to every rollout cost of MPPI. Layer two
//! repairs the optimized control sequence by gradient ascent on the sum of
//! violated DCBF residuals before the first control is executed.
//!
//! The crate also ships a dynamic bicycle model in track coordinates, a
//! closed-loop racing harness with seeded parallel sweeps, and a
//! command-line front end.

pub mod config;
pub mod cost;
pub mod dynamics;
pub mod harness;
pub mod mppi;
pub mod shield;
pub mod surrogate;
pub mod track;

#[cfg(feature = "cli")]
pub mod cli;

pub use cost::{CbfParams, CostModel, CostParams};
pub use dynamics::{AugmentedState, Control, Integrator, State, VehicleModel, VehicleParams};
pub use harness::{ControllerKind, RunSettings};
pub use mppi::{Executor, Mppi, MppiConfig};
pub use shield::{repair, RepairMethod, ShieldConfig};
pub use track::Track;
