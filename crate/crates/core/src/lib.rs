//! Drone-assisted federated learning.
//!
//! The crate evaluates the per-round convergence bound of FedAvg under packet
//! loss and sensor noise, optimizes the aggregating drone's placement and
//! trajectory against the asymptotic trajectory loss (ATL), and simulates
//! packet-lossy federated training to check those predictions.
//!
//! Module map:
//!
//! - [`model`]: domain types, the scenario file format and seeded RNG streams.
//! - [`channel`]: air-to-ground path loss, LoS probability and packet error rate.
//! - [`bound`]: per-round bound terms, gap recursion, ATL and its gradient.
//! - [`lp`]: Charnes-Cooper transform and an exact vertex-enumeration LP solver.
//! - [`placement`]: iterated linear-fractional placement for stationary devices.
//! - [`trajectory`]: greedy velocity policy, horizon optimizer and baselines.
//! - [`fedsim`]: FedAvg simulator, datasets, models and bound validation.

pub mod bound;
pub mod channel;
pub mod fedsim;
pub mod lp;
pub mod model;
pub mod placement;
pub mod trajectory;

mod error;

pub use error::{Error, Result};
pub use model::{
    DeviceState, LearningConstants, RadioEnvironment, Scenario, Trajectory, Vec2,
};
