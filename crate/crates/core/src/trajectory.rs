//! Drone trajectories for moving devices.
//!
//! - [`greedy_trajectory`]: per-waypoint optimal velocity followed by a speed
//!   projection, starting from the optimal stationary placement.
//! - [`horizon_optimize`]: SQP-style minimization of the full-horizon ATL.
//!   It is projected steepest descent on the analytic ATL gradient with an
//!   exact projection onto the speed constraints, not an SQP with quadratic
//!   subproblems; the feasible set is simple enough that this suffices.
//! - [`baseline_weighted_centroid`] and [`baseline_max_rate`].
//!
//! Waypoint `j ≥ 1` is held for rounds `(j−1)κ+1 ..= jκ`. When choosing it,
//! the greedy policy and the baselines look at the devices at the middle of
//! that dwell, round `(j−1)κ + ⌈κ/2⌉`.

use nalgebra::{Matrix2, SymmetricEigen};
use thiserror::Error;

use crate::bound::{AtlProblem, BoundCoefficients, BoundError, DeviceTraces};
use crate::channel;
use crate::model::{
    DeviceState, LearningConstants, RadioEnvironment, Scenario, Trajectory, Vec2, VelocityMode,
};
use crate::placement::{
    optimize_placement, weighted_centroid_at, PlacementError, PlacementObjective,
    PlacementOptions,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("initial placement failed: {0}")]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("could not make every round contract; failing rounds {0:?}")]
    InfeasibleInit(Vec<usize>),
    #[error("malformed trajectory file, line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl TrajectoryError {
    pub fn is_infeasible(&self) -> bool {
        match self {
            TrajectoryError::Placement(e) => e.is_infeasible(),
            TrajectoryError::InfeasibleInit(_) => true,
            _ => false,
        }
    }
}

/// Round whose device positions a waypoint is planned against.
pub fn reference_round(waypoint: usize, dwell: usize) -> usize {
    (waypoint - 1) * dwell + dwell.div_ceil(2)
}

/// Clip a displacement to the speed limit.
pub fn project_velocity(v: Vec2, v_max: f64, mode: VelocityMode) -> Vec2 {
    match mode {
        VelocityMode::Radial => {
            let n = v.norm();
            if n <= v_max {
                v
            } else {
                v * (v_max / n)
            }
        }
        VelocityMode::Componentwise => {
            let c = v_max / std::f64::consts::SQRT_2;
            Vec2::new(v.x.clamp(-c, c), v.y.clamp(-c, c))
        }
    }
}

/// One step of the greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityStep {
    /// Displacement minimizing `J + K` (stationary point), meters per step.
    pub v_hat: Vec2,
    /// `v_hat` after the speed projection.
    pub v_star: Vec2,
    /// Per-device weights `w_i`, evaluated at the drone's new position.
    pub weights: Vec<f64>,
    /// The weights summed to (nearly) zero or no stationary point was found;
    /// the drone holds position.
    pub degenerate: bool,
}

impl VelocityStep {
    pub fn project(mut self, v_max: f64, mode: VelocityMode) -> Self {
        self.v_star = project_velocity(self.v_hat, v_max, mode);
        self
    }
}

/// `J + K` as a function of the drone displacement `v`.
///
/// With `x̃_i = p − x_i` the drone offset from device `i` before the step and
/// `v_i` the device displacement, the offset after the step is `x̃_i + v − v_i`.
pub struct ResidualModel<'a> {
    radio: &'a RadioEnvironment,
    devices: &'a [DeviceState],
    coef: BoundCoefficients,
    /// `|loss part| + |noise part|` of each `a_i`, to judge cancellation.
    scale: Vec<f64>,
    drone: Vec2,
    /// Device ground positions after the step.
    targets: Vec<Vec2>,
    before: Vec<Vec2>,
}

impl<'a> ResidualModel<'a> {
    pub fn new(
        radio: &'a RadioEnvironment,
        constants: &LearningConstants,
        devices: &'a [DeviceState],
        drone: Vec2,
        grounds: &[Vec2],
        velocities: &[Vec2],
    ) -> Self {
        let coef = BoundCoefficients::new(devices, constants);
        let total: f64 = devices.iter().map(|d| d.dataset_size as f64).sum();
        let scale = devices
            .iter()
            .zip(&coef.a)
            .map(|(d, a)| {
                let loss = 2.0 * constants.c1 * d.dataset_size as f64 / (constants.lipschitz * total);
                2.0 * loss - a
            })
            .collect();
        Self {
            radio,
            devices,
            coef,
            scale,
            drone,
            targets: grounds.iter().zip(velocities).map(|(x, v)| x + v).collect(),
            before: grounds.to_vec(),
        }
    }

    pub fn value(&self, v: Vec2) -> f64 {
        let e = channel::packet_error_rates(self.radio, self.devices, &self.targets, self.drone + v);
        self.coef.residual(&e)
    }

    pub fn gradient(&self, v: Vec2) -> Vec2 {
        let p = self.drone + v;
        self.devices
            .iter()
            .zip(&self.targets)
            .zip(&self.coef.a)
            .fold(Vec2::zeros(), |acc, ((d, &x), a)| {
                acc + *a * channel::per_gradient(self.radio, d, x, p)
            })
    }

    pub fn hessian(&self, v: Vec2) -> Matrix2<f64> {
        let p = self.drone + v;
        self.devices
            .iter()
            .zip(&self.targets)
            .zip(&self.coef.a)
            .fold(Matrix2::zeros(), |acc, ((d, &x), a)| {
                acc + *a * channel::per_hessian(self.radio, d, x, p)
            })
    }

    /// `w_i = a_i φ_i` with the drone displaced by `v`, devices after their step.
    pub fn weights_at(&self, v: Vec2) -> Vec<f64> {
        let p = self.drone + v;
        self.devices
            .iter()
            .zip(&self.targets)
            .zip(&self.coef.a)
            .map(|((d, &x), a)| a * channel::per_slope(self.radio, d, x, p))
            .collect()
    }

    /// The closed-form weighted average with weights taken at the distances
    /// before the step: `Σ w_i (v_i − x̃_i) / Σ w_i`. This is only an
    /// approximation of the stationary point; `None` when the weights cancel.
    pub fn literal_velocity(&self) -> Option<(Vec2, Vec<f64>)> {
        let slopes: Vec<f64> = self
            .devices
            .iter()
            .zip(&self.before)
            .map(|(d, &x)| channel::per_slope(self.radio, d, x, self.drone))
            .collect();
        let w: Vec<f64> = slopes.iter().zip(&self.coef.a).map(|(s, a)| a * s).collect();
        let sum: f64 = w.iter().sum();
        let mag: f64 = slopes.iter().zip(&self.scale).map(|(s, c)| s * c).sum();
        if !(sum.abs() > 1e-12 * mag) {
            return None;
        }
        let num = w
            .iter()
            .zip(&self.targets)
            .fold(Vec2::zeros(), |acc, (wi, &x)| acc + *wi * (x - self.drone));
        Some((num / sum, w))
    }
}

/// Damped Newton with eigenvalue modification. Returns the last iterate and
/// whether the gradient vanished to working precision.
fn newton_minimize(
    f: impl Fn(Vec2) -> f64,
    grad: impl Fn(Vec2) -> Vec2,
    hess: impl Fn(Vec2) -> Matrix2<f64>,
    x0: Vec2,
    max_step: f64,
) -> (Vec2, bool) {
    let mut x = x0;
    let mut fx = f(x);
    let mut g = grad(x);
    let g_scale = g.norm();
    for _ in 0..200 {
        let gn = g.norm();
        if gn == 0.0 {
            return (x, true);
        }
        let eig = SymmetricEigen::new(hess(x));
        let floor = 1e-10 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let vt_g = eig.eigenvectors.transpose() * g;
        let scaled = Vec2::new(
            vt_g[0] / eig.eigenvalues[0].abs().max(floor),
            vt_g[1] / eig.eigenvalues[1].abs().max(floor),
        );
        let mut step = -(eig.eigenvectors * scaled);
        if step.norm() > max_step {
            step *= max_step / step.norm();
        }
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let y = x + step * t;
            let fy = f(y);
            let gy = grad(y);
            let flat = (fy - fx).abs() <= 8.0 * f64::EPSILON * fx.abs().max(1e-300);
            if fy < fx || (flat && gy.norm() < gn) {
                x = y;
                fx = fy;
                g = gy;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (x, g.norm() <= 1e-10 * (1.0 + g_scale))
}

/// Newton iteration on `∇S = 0` (finds saddles and maxima too).
fn newton_root(
    grad: impl Fn(Vec2) -> Vec2,
    hess: impl Fn(Vec2) -> Matrix2<f64>,
    x0: Vec2,
    max_step: f64,
) -> Option<Vec2> {
    let mut x = x0;
    let mut g = grad(x);
    let tol = 1e-12 * (1.0 + g.norm());
    for _ in 0..200 {
        if g.norm() <= tol {
            return Some(x);
        }
        let step = hess(x).lu().solve(&(-g))?;
        let step = if step.norm() > max_step {
            step * (max_step / step.norm())
        } else {
            step
        };
        let mut t = 1.0;
        loop {
            let y = x + step * t;
            let gy = grad(y);
            if gy.norm() < g.norm() {
                x = y;
                g = gy;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return None;
            }
        }
    }
    (g.norm() <= 1e-9).then_some(x)
}

/// Displacement `v̂` that makes `J + K` stationary after one step.
///
/// `grounds` are device positions before the step and `velocities` their
/// displacements. The closed-form weighted average is used as a starting
/// guess and refined by Newton's method, so the result is an exact stationary
/// point even when the weights change over the step. If the weights cancel or
/// no stationary point is found, the drone holds position (`degenerate`).
pub fn optimal_velocity(
    radio: &RadioEnvironment,
    constants: &LearningConstants,
    devices: &[DeviceState],
    drone: Vec2,
    grounds: &[Vec2],
    velocities: &[Vec2],
) -> VelocityStep {
    let model = ResidualModel::new(radio, constants, devices, drone, grounds, velocities);
    let hold = |weights: Vec<f64>| VelocityStep {
        v_hat: Vec2::zeros(),
        v_star: Vec2::zeros(),
        weights,
        degenerate: true,
    };
    let Some((literal, w0)) = model.literal_velocity() else {
        return hold(model.weights_at(Vec2::zeros()));
    };
    let span = model
        .targets
        .iter()
        .map(|x| (x - drone).norm())
        .fold(radio.altitude, f64::max);
    let max_step = 2.0 * span;
    let start = if model.value(literal) <= model.value(Vec2::zeros()) {
        literal
    } else {
        Vec2::zeros()
    };
    let (v, ok) = newton_minimize(
        |v| model.value(v),
        |v| model.gradient(v),
        |v| model.hessian(v),
        start,
        max_step,
    );
    let v = if ok {
        Some(v)
    } else {
        newton_root(|v| model.gradient(v), |v| model.hessian(v), literal, max_step)
    };
    match v {
        Some(v) => VelocityStep {
            v_hat: v,
            v_star: v,
            weights: model.weights_at(v),
            degenerate: false,
        },
        None => hold(w0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    pub trajectory: Trajectory,
    /// One step per waypoint after the start.
    pub steps: Vec<VelocityStep>,
}

/// Greedy trajectory: start at the optimal stationary placement for the
/// initial device positions, then move each waypoint by the projected
/// optimal velocity.
pub fn greedy_trajectory(
    scenario: &Scenario,
    traces: &DeviceTraces,
) -> Result<GreedyResult, TrajectoryError> {
    let obj = PlacementObjective::new(
        &scenario.radio,
        &scenario.devices,
        traces.at(0).to_vec(),
        &scenario.constants,
    );
    let start = optimize_placement(&obj, &PlacementOptions::from_scenario(scenario))?;
    let dwell = scenario.dwell;
    let mut waypoints = vec![start.position];
    let mut steps = Vec::with_capacity(scenario.waypoint_steps());
    for j in 1..=scenario.waypoint_steps() {
        let before = traces.at((j - 1) * dwell);
        let after = traces.at(reference_round(j, dwell));
        let velocities: Vec<Vec2> = after.iter().zip(before).map(|(a, b)| a - b).collect();
        let p = waypoints[j - 1];
        let step = optimal_velocity(
            &scenario.radio,
            &scenario.constants,
            &scenario.devices,
            p,
            before,
            &velocities,
        )
        .project(scenario.v_max, scenario.solver.velocity_mode);
        waypoints.push(p + step.v_star);
        steps.push(step);
    }
    Ok(GreedyResult {
        trajectory: Trajectory::new(waypoints, dwell, false),
        steps,
    })
}

/// Speed constraints between consecutive free variables. For closed
/// trajectories the last waypoint is the first one, so the pairs wrap.
fn pairs(n_free: usize, closed: bool) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n_free.saturating_sub(1)).map(|j| (j, j + 1)).collect();
    if closed && n_free > 1 {
        out.push((n_free - 1, 0));
    }
    out
}

fn free_variables(traj: &Trajectory) -> Vec<Vec2> {
    let mut w = traj.waypoints.clone();
    if traj.closed {
        w.pop();
    }
    w
}

fn rebuild(free: &[Vec2], template: &Trajectory) -> Trajectory {
    let mut w = free.to_vec();
    if template.closed {
        w.push(free[0]);
    }
    Trajectory::new(w, template.dwell, template.closed)
}

/// Cyclic projection onto the pairwise speed constraints.
fn cyclic_projection(y: &mut [Vec2], links: &[(usize, usize)], v_max: f64) {
    for _ in 0..100 {
        let mut worst = 0.0f64;
        for &(a, b) in links {
            let d = y[b] - y[a];
            let n = d.norm();
            if n > v_max {
                let corr = d * ((n - v_max) / (2.0 * n));
                y[a] += corr;
                y[b] -= corr;
                worst = worst.max(n - v_max);
            }
        }
        if worst <= 1e-12 {
            break;
        }
    }
}

/// Largest `s ∈ [0, 1]` keeping `x + s(y − x)` speed-feasible, given a
/// feasible `x`. Each pair gives a quadratic inequality in `s`.
fn feasible_fraction(x: &[Vec2], y: &[Vec2], links: &[(usize, usize)], v_max: f64) -> f64 {
    let mut s = 1.0f64;
    for &(a, b) in links {
        let u = x[b] - x[a];
        let w = (y[b] - y[a]) - u;
        let qa = w.norm_squared();
        if qa < 1e-300 {
            continue;
        }
        let qb = 2.0 * u.dot(&w);
        let qc = u.norm_squared() - v_max * v_max;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        let root = (-qb + disc.sqrt()) / (2.0 * qa);
        s = s.min(root.max(0.0));
    }
    s
}

fn speed_feasible(free: &[Vec2], links: &[(usize, usize)], v_max: f64) -> bool {
    links
        .iter()
        .all(|&(a, b)| (free[b] - free[a]).norm() <= v_max + 1e-9)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonOptions {
    pub max_iters: usize,
    /// Initial largest waypoint move per iteration, meters.
    pub step: f64,
    pub v_max: f64,
}

impl HorizonOptions {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            max_iters: s.solver.horizon_max_iters,
            step: 1.0,
            v_max: s.v_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonResult {
    pub trajectory: Trajectory,
    pub atl: f64,
    pub initial_atl: f64,
    pub iterations: usize,
}

/// Normalized projected descent shared by both solver phases.
///
/// Each iteration takes a steepest-descent step normalized so the largest
/// waypoint move equals the current step length, projects it onto the speed
/// constraints, and pulls it back toward the current iterate until it is
/// exactly feasible. `value` returns `None` for unacceptable candidates; a
/// step is accepted only if the value strictly decreases, after which the
/// step grows by half, otherwise it is halved.
fn projected_descent<V, G>(
    traj: Trajectory,
    start: f64,
    opts: &HorizonOptions,
    mut value: V,
    mut gradient: G,
    done: impl Fn(f64) -> bool,
) -> Result<(Trajectory, f64, usize), TrajectoryError>
where
    V: FnMut(&Trajectory) -> Result<Option<f64>, TrajectoryError>,
    G: FnMut(&Trajectory) -> Result<Vec<Vec2>, TrajectoryError>,
{
    let mut traj = traj;
    let mut free = free_variables(&traj);
    let links = pairs(free.len(), traj.closed);
    let mut current = start;
    let mut step = opts.step;
    let mut iterations = 0;
    while iterations < opts.max_iters && step > 1e-6 && !done(current) {
        iterations += 1;
        let full = gradient(&traj)?;
        let grad = &full[..free.len()];
        let gmax = grad.iter().map(|g| g.norm()).fold(0.0, f64::max);
        if !(gmax > 0.0) {
            break;
        }
        let mut accepted = false;
        while step > 1e-6 {
            let mut y: Vec<Vec2> = free
                .iter()
                .zip(grad)
                .map(|(p, g)| p - g * (step / gmax))
                .collect();
            cyclic_projection(&mut y, &links, opts.v_max);
            let s = feasible_fraction(&free, &y, &links, opts.v_max);
            let y: Vec<Vec2> = free.iter().zip(&y).map(|(x, y)| x + (y - x) * s).collect();
            let candidate = rebuild(&y, &traj);
            if speed_feasible(&y, &links, opts.v_max) {
                if let Some(v) = value(&candidate)? {
                    if v < current {
                        free = y;
                        traj = candidate;
                        current = v;
                        step *= 1.5;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((traj, current, iterations))
}

/// Drive every round's contraction factor below `1 − margin` by descending
/// on the total excess. Fails when the excess cannot be removed.
fn restore_contraction(
    problem: &AtlProblem<'_>,
    init: Trajectory,
    opts: &HorizonOptions,
) -> Result<(Trajectory, usize), TrajectoryError> {
    let c = problem.constants;
    let margin = 1e-3 * c.strong_convexity / c.lipschitz;
    let (excess, _) = problem.contraction_excess(&init, margin)?;
    let (traj, left, iterations) = projected_descent(
        init,
        excess,
        opts,
        |t| Ok(Some(problem.contraction_excess(t, margin)?.0)),
        |t| Ok(problem.contraction_excess(t, margin)?.1),
        |v| v == 0.0,
    )?;
    if left > 0.0 {
        let flagged = problem.atl(&traj)?.flagged_rounds();
        return Err(TrajectoryError::InfeasibleInit(flagged));
    }
    Ok((traj, iterations))
}

/// Minimize the ATL over waypoints subject to the speed limit (and closure,
/// when `init.closed`) and contraction in every round.
///
/// A speed-infeasible start is first projected onto the constraints. A start
/// with non-contracting rounds is first repaired by descending on the total
/// contraction excess; the solver fails only if that repair stalls. The ATL
/// phase then accepts a step only if the ATL strictly decreases and every
/// round still contracts.
pub fn horizon_optimize(
    problem: &AtlProblem<'_>,
    init: &Trajectory,
    opts: &HorizonOptions,
) -> Result<HorizonResult, TrajectoryError> {
    let initial_atl = problem.atl(init)?.value;
    let mut traj = init.clone();
    let free = free_variables(&traj);
    let links = pairs(free.len(), traj.closed);
    if !speed_feasible(&free, &links, opts.v_max) {
        let mut y = free;
        cyclic_projection(&mut y, &links, opts.v_max);
        if !speed_feasible(&y, &links, opts.v_max) {
            return Err(TrajectoryError::InfeasibleInit(Vec::new()));
        }
        traj = rebuild(&y, &traj);
    }
    let mut iterations = 0;
    if !problem.atl(&traj)?.contraction_ok() {
        let (repaired, used) = restore_contraction(problem, traj, opts)?;
        traj = repaired;
        iterations += used;
    }
    let atl = problem.atl(&traj)?.value;
    let (traj, atl, used) = projected_descent(
        traj,
        atl,
        opts,
        |t| {
            let rep = problem.atl(t)?;
            Ok(rep.contraction_ok().then_some(rep.value))
        },
        |t| Ok(problem.atl_gradient(t)?),
        |_| false,
    )?;
    Ok(HorizonResult {
        trajectory: traj,
        atl,
        initial_atl,
        iterations: iterations + used,
    })
}

/// Initial trajectory for the horizon solver: the greedy trajectory when
/// open, otherwise the better of hovering at the weighted centroid or at the
/// optimal stationary placement.
pub fn horizon_initialization(
    scenario: &Scenario,
    traces: &DeviceTraces,
) -> Result<Trajectory, TrajectoryError> {
    if !scenario.solver.closed_loop {
        return Ok(greedy_trajectory(scenario, traces)?.trajectory);
    }
    let problem = AtlProblem::new(scenario, traces);
    let centroid = weighted_centroid_at(&scenario.devices, traces.at(0));
    let mut candidates = vec![Trajectory::stationary(centroid, scenario.horizon, scenario.dwell)];
    let obj = PlacementObjective::new(
        &scenario.radio,
        &scenario.devices,
        traces.at(0).to_vec(),
        &scenario.constants,
    );
    if let Ok(r) = optimize_placement(&obj, &PlacementOptions::from_scenario(scenario)) {
        candidates.push(Trajectory::stationary(r.position, scenario.horizon, scenario.dwell));
    }
    let mut best: Option<(f64, Trajectory)> = None;
    for c in candidates {
        let rep = problem.atl(&c)?;
        if rep.contraction_ok() && best.as_ref().is_none_or(|(v, _)| rep.value < *v) {
            best = Some((rep.value, c));
        }
    }
    best.map(|(_, t)| t)
        .ok_or(TrajectoryError::InfeasibleInit(Vec::new()))
}

/// Full-horizon plan for a scenario.
pub fn plan_horizon(
    scenario: &Scenario,
    traces: &DeviceTraces,
) -> Result<HorizonResult, TrajectoryError> {
    let init = horizon_initialization(scenario, traces)?;
    let problem = AtlProblem::new(scenario, traces);
    horizon_optimize(&problem, &init, &HorizonOptions::from_scenario(scenario))
}

/// Follow the weighted centroid of the devices, speed-projected.
pub fn baseline_weighted_centroid(scenario: &Scenario, traces: &DeviceTraces) -> Trajectory {
    let devices = &scenario.devices;
    let dwell = scenario.dwell;
    let mut w = vec![weighted_centroid_at(devices, traces.at(0))];
    for j in 1..=scenario.waypoint_steps() {
        let target = weighted_centroid_at(devices, traces.at(reference_round(j, dwell)));
        let p = w[j - 1];
        w.push(p + project_velocity(target - p, scenario.v_max, scenario.solver.velocity_mode));
    }
    Trajectory::new(w, dwell, false)
}

/// Sum of Shannon rates of all devices.
pub fn sum_rate(radio: &RadioEnvironment, devices: &[DeviceState], grounds: &[Vec2], p: Vec2) -> f64 {
    devices
        .iter()
        .zip(grounds)
        .map(|(d, &x)| channel::achievable_rate(radio, d, x, p))
        .sum()
}

fn sum_rate_gradient(
    radio: &RadioEnvironment,
    devices: &[DeviceState],
    grounds: &[Vec2],
    p: Vec2,
) -> Vec2 {
    devices
        .iter()
        .zip(grounds)
        .fold(Vec2::zeros(), |acc, (d, &x)| acc + channel::rate_gradient(radio, d, x, p))
}

/// Gradient ascent on the sum rate from `x0`, with an adaptive step length
/// along the normalized gradient.
pub fn maximize_sum_rate(
    radio: &RadioEnvironment,
    devices: &[DeviceState],
    grounds: &[Vec2],
    x0: Vec2,
) -> Vec2 {
    let mut x = x0;
    let mut fx = sum_rate(radio, devices, grounds, x);
    let mut step = 1.0;
    for _ in 0..20_000 {
        if step < 1e-7 {
            break;
        }
        let g = sum_rate_gradient(radio, devices, grounds, x);
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        let y = x + g * (step / gn);
        let fy = sum_rate(radio, devices, grounds, y);
        if fy > fx {
            x = y;
            fx = fy;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    x
}

/// Start at the sum-rate maximizer; each waypoint moves toward the sum-rate
/// maximizer reached by gradient ascent from the previous waypoint,
/// speed-projected.
pub fn baseline_max_rate(scenario: &Scenario, traces: &DeviceTraces) -> Trajectory {
    let (radio, devices) = (&scenario.radio, &scenario.devices);
    let dwell = scenario.dwell;
    let start = maximize_sum_rate(
        radio,
        devices,
        traces.at(0),
        weighted_centroid_at(devices, traces.at(0)),
    );
    let mut w = vec![start];
    for j in 1..=scenario.waypoint_steps() {
        let grounds = traces.at(reference_round(j, dwell));
        let p = w[j - 1];
        let target = maximize_sum_rate(radio, devices, grounds, p);
        w.push(p + project_velocity(target - p, scenario.v_max, scenario.solver.velocity_mode));
    }
    Trajectory::new(w, dwell, false)
}

/// Trajectory as CSV: `#`-prefixed `key = value` metadata, then
/// `waypoint_index,x,y` rows.
pub fn trajectory_to_csv(traj: &Trajectory, metadata: &[(&str, String)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# dwell = {}\n# closed = {}\n", traj.dwell, traj.closed));
    for (k, v) in metadata {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str("waypoint_index,x,y\n");
    for (i, p) in traj.waypoints.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", p.x, p.y));
    }
    out
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory, TrajectoryError> {
    let err = |line: usize, message: &str| TrajectoryError::Parse {
        line,
        message: message.to_string(),
    };
    let mut dwell = None;
    let mut closed = false;
    let mut header = false;
    let mut waypoints = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(meta) = raw.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                match k.trim() {
                    "dwell" => {
                        dwell = Some(v.trim().parse::<usize>().map_err(|_| err(line, "bad dwell"))?)
                    }
                    "closed" => {
                        closed = v.trim().parse::<bool>().map_err(|_| err(line, "bad closed flag"))?
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !header {
            if raw != "waypoint_index,x,y" {
                return Err(err(line, "expected header `waypoint_index,x,y`"));
            }
            header = true;
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 3 {
            return Err(err(line, "expected three columns"));
        }
        let idx: usize = cols[0].trim().parse().map_err(|_| err(line, "bad index"))?;
        if idx != waypoints.len() {
            return Err(err(line, "waypoint indices must count up from 0"));
        }
        let x: f64 = cols[1].trim().parse().map_err(|_| err(line, "bad x"))?;
        let y: f64 = cols[2].trim().parse().map_err(|_| err(line, "bad y"))?;
        waypoints.push(Vec2::new(x, y));
    }
    let dwell = dwell.ok_or_else(|| err(1, "missing `# dwell = ...`"))?;
    Ok(Trajectory::new(waypoints, dwell, closed))
}
