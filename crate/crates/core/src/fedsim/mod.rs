//! Packet-lossy FedAvg over sensor-noisy local datasets.

pub mod constants;
pub mod data;
pub mod idx;
pub mod models;
pub mod sim;
pub mod theorem;

use thiserror::Error;

use crate::bound::BoundError;
use crate::model::{ModelKind, WaypointError};

pub use constants::{estimate_constants, EstimateOptions};
pub use data::{add_sensor_noise, make_synthetic, DataSource, Dataset, LocalDataset};
pub use idx::{load_idx, IdxError};
pub use models::{aggregate, local_step, Model};
pub use sim::{
    build_federation, round_log_csv, rounds_to_target, simulate, Federation, RoundRecord,
    SimOptions, SimOutput,
};
pub use theorem::{check_theorem_bound, monte_carlo, TheoremReport, TheoremRound};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Waypoint(#[from] WaypointError),
    #[error("non-finite model after local step on device {device} in round {round}")]
    NonFinite { device: u32, round: usize },
    #[error("{0} is not supported for {1}")]
    Unsupported(&'static str, &'static str),
    #[error("dataset has {available} samples but the devices need {needed}")]
    DatasetTooSmall { needed: usize, available: usize },
    #[error("dataset has {found} features but the scenario declares M = {expected}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
}

impl SimError {
    pub(crate) fn unsupported(what: &'static str, kind: ModelKind) -> Self {
        SimError::Unsupported(what, kind.as_str())
    }
}
