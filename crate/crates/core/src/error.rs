use thiserror::Error;

use crate::bound::BoundError;
use crate::fedsim::SimError;
use crate::lp::LpError;
use crate::model::ScenarioError;
use crate::placement::PlacementError;
use crate::trajectory::TrajectoryError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl Error {
    /// True when the failure means "no configuration satisfies the contraction
    /// constraint", as opposed to bad input or I/O.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Placement(e) => e.is_infeasible(),
            Error::Trajectory(e) => e.is_infeasible(),
            Error::Lp(LpError::Infeasible) => true,
            _ => false,
        }
    }
}
