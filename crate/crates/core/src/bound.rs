//! Per-round convergence bound and the asymptotic trajectory loss (ATL).
//!
//! With learning rate `1/L`, FedAvg under packet loss and sensor noise obeys
//!
//! ```text
//! E[gap_{t+1}] ≤ Φ_t E[gap_t] + J_t + K_t
//! Φ_t = 1 − μ/L + (4μc2 / LD) Σ D_i e_it
//! J_t = (2c1 / LD) Σ D_i e_it
//! K_t = (ηM / 2LD²) Σ D_i (1 − e_it) σ_i²
//! ```
//!
//! The ATL is the residual of that recursion started from a zero gap:
//! `Σ_{t<T} (J_t+K_t) Π_{τ=t+1..T} Φ_τ + (J_T+K_T)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::channel;
use crate::model::{DeviceState, LearningConstants, RadioEnvironment, Scenario, Trajectory, Vec2, WaypointError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("packet error rate {value} of device {index} is outside [0, 1]")]
    PerOutOfRange { index: usize, value: f64 },
    #[error("device traces cover {covered} rounds but {requested} were requested")]
    TraceTooShort { covered: usize, requested: usize },
    #[error(transparent)]
    Trajectory(#[from] WaypointError),
}

/// The three terms of one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTerms {
    pub phi: f64,
    pub j: f64,
    pub k: f64,
    pub contraction_ok: bool,
}

impl RoundTerms {
    /// `J_t + K_t`.
    pub fn residual(&self) -> f64 {
        self.j + self.k
    }
}

/// The bound terms as affine functions of the PER vector:
/// `Φ = phi0 + Σ b_i e_i`, `J + K = s0 + Σ a_i e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCoefficients {
    pub phi0: f64,
    pub b: Vec<f64>,
    pub s0: f64,
    pub a: Vec<f64>,
}

impl BoundCoefficients {
    pub fn new(devices: &[DeviceState], c: &LearningConstants) -> Self {
        let total: f64 = devices.iter().map(|d| d.dataset_size as f64).sum();
        let l = c.lipschitz;
        let noise_scale = c.eta * c.feature_dim as f64 / (2.0 * l * total * total);
        let b = devices
            .iter()
            .map(|d| 4.0 * c.strong_convexity * c.c2 * d.dataset_size as f64 / (l * total))
            .collect();
        let a = devices
            .iter()
            .map(|d| {
                let di = d.dataset_size as f64;
                2.0 * c.c1 * di / (l * total) - noise_scale * di * d.noise_var
            })
            .collect();
        let s0 = noise_scale
            * devices
                .iter()
                .map(|d| d.dataset_size as f64 * d.noise_var)
                .sum::<f64>();
        Self {
            phi0: 1.0 - c.strong_convexity / l,
            b,
            s0,
            a,
        }
    }

    pub fn phi(&self, per: &[f64]) -> f64 {
        self.phi0 + dot(&self.b, per)
    }

    pub fn residual(&self, per: &[f64]) -> f64 {
        self.s0 + dot(&self.a, per)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pers(per: &[f64], n: usize) -> Result<(), BoundError> {
    if per.len() != n {
        return Err(BoundError::LengthMismatch {
            expected: n,
            got: per.len(),
        });
    }
    if let Some((index, &value)) = per
        .iter()
        .enumerate()
        .find(|(_, e)| !(**e >= 0.0 && **e <= 1.0))
    {
        return Err(BoundError::PerOutOfRange { index, value });
    }
    Ok(())
}

/// Evaluate `Φ_t`, `J_t`, `K_t` for one round.
pub fn round_terms(
    per: &[f64],
    devices: &[DeviceState],
    constants: &LearningConstants,
) -> Result<RoundTerms, BoundError> {
    check_pers(per, devices.len())?;
    let c = constants;
    let total: f64 = devices.iter().map(|d| d.dataset_size as f64).sum();
    let lost: f64 = devices
        .iter()
        .zip(per)
        .map(|(d, e)| d.dataset_size as f64 * e)
        .sum();
    let noisy: f64 = devices
        .iter()
        .zip(per)
        .map(|(d, e)| d.dataset_size as f64 * (1.0 - e) * d.noise_var)
        .sum();
    let l = c.lipschitz;
    let phi = 1.0 - c.strong_convexity / l + 4.0 * c.strong_convexity * c.c2 / (l * total) * lost;
    Ok(RoundTerms {
        phi,
        j: 2.0 * c.c1 / (l * total) * lost,
        k: c.eta * c.feature_dim as f64 / (2.0 * l * total * total) * noisy,
        contraction_ok: phi < 1.0,
    })
}

/// One step of the gap recursion.
pub fn gap_step(gap: f64, terms: &RoundTerms) -> f64 {
    terms.phi * gap + terms.residual()
}

/// Gap bound after `rounds` identical rounds starting from `gap0`.
pub fn stationary_gap(terms: &RoundTerms, rounds: usize, gap0: f64) -> f64 {
    let s = terms.residual();
    if terms.phi == 1.0 {
        return gap0 + rounds as f64 * s;
    }
    let pow = terms.phi.powi(rounds as i32);
    pow * gap0 + s * (1.0 - pow) / (1.0 - terms.phi)
}

/// Ground positions of every device for rounds `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTraces {
    rounds: Vec<Vec<Vec2>>,
}

impl DeviceTraces {
    /// Constant-velocity motion from each device's initial position.
    pub fn linear(devices: &[DeviceState], horizon: usize) -> Self {
        Self {
            rounds: (0..=horizon)
                .map(|t| devices.iter().map(|d| d.position_at(t)).collect())
                .collect(),
        }
    }

    /// Explicit traces; `rounds[t][i]` is device `i` at round `t`.
    pub fn from_rounds(rounds: Vec<Vec<Vec2>>) -> Self {
        Self { rounds }
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len().saturating_sub(1)
    }

    pub fn at(&self, round: usize) -> &[Vec2] {
        &self.rounds[round]
    }
}

/// Everything the ATL depends on besides the drone trajectory.
#[derive(Debug, Clone, Copy)]
pub struct AtlProblem<'a> {
    pub radio: &'a RadioEnvironment,
    pub constants: &'a LearningConstants,
    pub devices: &'a [DeviceState],
    pub traces: &'a DeviceTraces,
    pub horizon: usize,
}

/// ATL value with the per-round terms that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlReport {
    pub value: f64,
    pub terms: Vec<RoundTerms>,
}

impl AtlReport {
    /// True when every round contracts (`Φ_t < 1`).
    pub fn contraction_ok(&self) -> bool {
        self.terms.iter().all(|t| t.contraction_ok)
    }

    /// Rounds (1-based) with `Φ_t ≥ 1`.
    pub fn flagged_rounds(&self) -> Vec<usize> {
        self.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.contraction_ok)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Accumulate the ATL from per-round terms (round 1 first).
pub fn atl_from_terms(terms: &[RoundTerms]) -> f64 {
    terms.iter().fold(0.0, |g, t| t.phi * g + t.residual())
}

impl<'a> AtlProblem<'a> {
    pub fn new(scenario: &'a Scenario, traces: &'a DeviceTraces) -> Self {
        Self {
            radio: &scenario.radio,
            constants: &scenario.constants,
            devices: &scenario.devices,
            traces,
            horizon: scenario.horizon,
        }
    }

    fn check(&self, traj: &Trajectory) -> Result<Vec<Vec2>, BoundError> {
        if self.traces.horizon() < self.horizon {
            return Err(BoundError::TraceTooShort {
                covered: self.traces.horizon(),
                requested: self.horizon,
            });
        }
        Ok(traj.expand(self.horizon)?)
    }

    /// PERs of every device in `round` with the drone at `drone`.
    pub fn pers(&self, round: usize, drone: Vec2) -> Vec<f64> {
        channel::packet_error_rates(self.radio, self.devices, self.traces.at(round), drone)
    }

    pub fn terms(&self, round: usize, drone: Vec2) -> RoundTerms {
        round_terms(&self.pers(round, drone), self.devices, self.constants)
            .expect("PERs are computed for every device")
    }

    /// Evaluate the ATL. Non-contracting rounds are reported, not rejected.
    pub fn atl(&self, traj: &Trajectory) -> Result<AtlReport, BoundError> {
        let drones = self.check(traj)?;
        let terms: Vec<RoundTerms> = drones
            .par_iter()
            .enumerate()
            .map(|(i, &p)| self.terms(i + 1, p))
            .collect();
        Ok(AtlReport {
            value: atl_from_terms(&terms),
            terms,
        })
    }

    /// Gradient of the ATL with respect to every waypoint.
    ///
    /// Entry 0 (the start) is zero for open trajectories since no round uses
    /// it. For closed trajectories the first and last waypoint are one
    /// variable and both entries hold the combined gradient.
    pub fn atl_gradient(&self, traj: &Trajectory) -> Result<Vec<Vec2>, BoundError> {
        let drones = self.check(traj)?;
        let coef = BoundCoefficients::new(self.devices, self.constants);
        let pers: Vec<Vec<f64>> = drones
            .par_iter()
            .enumerate()
            .map(|(i, &p)| self.pers(i + 1, p))
            .collect();
        let t_max = drones.len();
        // prefix[t] is the ATL of rounds 1..=t; suffix[t] = Π_{τ>t} Φ_τ.
        let phis: Vec<f64> = pers.iter().map(|e| coef.phi(e)).collect();
        let mut prefix = vec![0.0; t_max + 1];
        for t in 1..=t_max {
            prefix[t] = phis[t - 1] * prefix[t - 1] + coef.residual(&pers[t - 1]);
        }
        let mut suffix = vec![1.0; t_max + 1];
        for t in (0..t_max).rev() {
            suffix[t] = suffix[t + 1] * phis[t];
        }
        let per_round: Vec<Vec2> = (1..=t_max)
            .into_par_iter()
            .map(|t| {
                let p = drones[t - 1];
                let grounds = self.traces.at(t);
                let ds = suffix[t];
                let dphi = prefix[t - 1] * suffix[t];
                self.devices
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let w = ds * coef.a[i] + dphi * coef.b[i];
                        w * channel::per_gradient(self.radio, d, grounds[i], p)
                    })
                    .fold(Vec2::zeros(), |acc, g| acc + g)
            })
            .collect();
        let mut grad = vec![Vec2::zeros(); traj.waypoints.len()];
        for (i, g) in per_round.into_iter().enumerate() {
            grad[traj.waypoint_index(i + 1)] += g;
        }
        merge_closed(traj, &mut grad);
        Ok(grad)
    }

    /// `Σ_t max(0, Φ_t − (1 − margin))` and its gradient per waypoint; zero
    /// exactly when every round contracts by at least `margin`.
    pub fn contraction_excess(
        &self,
        traj: &Trajectory,
        margin: f64,
    ) -> Result<(f64, Vec<Vec2>), BoundError> {
        let drones = self.check(traj)?;
        let coef = BoundCoefficients::new(self.devices, self.constants);
        let mut total = 0.0;
        let mut grad = vec![Vec2::zeros(); traj.waypoints.len()];
        for (i, &p) in drones.iter().enumerate() {
            let t = i + 1;
            let excess = coef.phi(&self.pers(t, p)) - (1.0 - margin);
            if excess > 0.0 {
                total += excess;
                let grounds = self.traces.at(t);
                for (k, d) in self.devices.iter().enumerate() {
                    grad[traj.waypoint_index(t)] +=
                        coef.b[k] * channel::per_gradient(self.radio, d, grounds[k], p);
                }
            }
        }
        merge_closed(traj, &mut grad);
        Ok((total, grad))
    }
}

fn merge_closed(traj: &Trajectory, grad: &mut [Vec2]) {
    if traj.closed {
        let last = grad.len() - 1;
        let joint = grad[0] + grad[last];
        grad[0] = joint;
        grad[last] = joint;
    }
}
