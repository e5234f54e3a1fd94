//! Monte-Carlo check of the per-round gap bound.

use rayon::prelude::*;

use super::sim::{simulate, Federation, SimOptions, SimOutput};
use super::SimError;
use crate::bound::{round_terms, DeviceTraces};
use crate::model::{DeviceState, LearningConstants, Scenario, Trajectory};

/// Run `draws` independent delivery realizations (draw indices `0..draws`).
pub fn monte_carlo(
    fed: &Federation,
    scenario: &Scenario,
    trajectory: &Trajectory,
    traces: &DeviceTraces,
    draws: u64,
    base: &SimOptions,
) -> Result<Vec<SimOutput>, SimError> {
    (0..draws)
        .into_par_iter()
        .map(|draw| {
            let opts = SimOptions {
                draw,
                ..base.clone()
            };
            simulate(fed, scenario, trajectory, traces, &opts)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremRound {
    pub round: usize,
    /// Mean gap before the round.
    pub previous: f64,
    /// Mean gap after the round.
    pub measured: f64,
    /// `Φ_t · previous + J_t + K_t`.
    pub predicted: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub rounds: Vec<TheoremRound>,
}

impl TheoremReport {
    pub fn violations(&self) -> usize {
        self.rounds.iter().filter(|r| r.violated).count()
    }

    pub fn violation_fraction(&self) -> f64 {
        if self.rounds.is_empty() {
            0.0
        } else {
            self.violations() as f64 / self.rounds.len() as f64
        }
    }
}

/// Compare the mean measured gap after each round with the bound applied to
/// the mean gap before it. All outputs must share the same PER sequence
/// (they differ only in delivery draws) and carry gaps.
///
/// A round counts as violated when the measured gap exceeds the prediction
/// by more than `1e-12` of the previous gap, which absorbs rounding in the
/// exact-contraction case.
pub fn check_theorem_bound(
    outputs: &[SimOutput],
    devices: &[DeviceState],
    constants: &LearningConstants,
) -> Result<TheoremReport, SimError> {
    let first = outputs
        .first()
        .ok_or_else(|| SimError::Invalid("no simulation outputs".into()))?;
    let rounds = first.records.len();
    let n = outputs.len() as f64;
    let mean_gap = |t: usize| -> Result<f64, SimError> {
        outputs
            .iter()
            .map(|o| o.gap_at(t).ok_or_else(|| SimError::Invalid("gap unknown for this model".into())))
            .sum::<Result<f64, _>>()
            .map(|s| s / n)
    };
    let mut report = Vec::with_capacity(rounds);
    let mut previous = mean_gap(0)?;
    for t in 1..=rounds {
        let terms = round_terms(&first.records[t - 1].pers, devices, constants)?;
        let measured = mean_gap(t)?;
        let predicted = terms.phi * previous + terms.residual();
        report.push(TheoremRound {
            round: t,
            previous,
            measured,
            predicted,
            violated: measured > predicted + 1e-12 * previous,
        });
        previous = measured;
    }
    Ok(TheoremReport { rounds: report })
}
