use skyfed_core::bound::DeviceTraces;
use skyfed_core::trajectory::{
    baseline_max_rate, baseline_weighted_centroid, greedy_trajectory, plan_horizon,
};
use skyfed_core::{Scenario, Trajectory};

use crate::args::Solver;
use crate::CliError;

/// Trajectory from the chosen solver. Only the horizon solver can close the
/// loop.
pub fn plan(s: &Scenario, traces: &DeviceTraces, solver: Solver) -> Result<Trajectory, CliError> {
    if s.solver.closed_loop && solver != Solver::Horizon {
        return Err(CliError::Usage(format!(
            "closed-loop trajectories need the horizon solver, not {}",
            solver.name()
        )));
    }
    let traj = match solver {
        Solver::Greedy => greedy_trajectory(s, traces).map_err(skyfed_core::Error::from)?.trajectory,
        Solver::Horizon => plan_horizon(s, traces).map_err(skyfed_core::Error::from)?.trajectory,
        Solver::Centroid => baseline_weighted_centroid(s, traces),
        Solver::Maxrate => baseline_max_rate(s, traces),
    };
    Ok(traj)
}
