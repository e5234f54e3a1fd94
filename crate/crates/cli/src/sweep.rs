//! Parameter sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;
use skyfed_core::bound::{AtlProblem, DeviceTraces};
use skyfed_core::channel::tx_power_for_per;
use skyfed_core::fedsim::{build_federation, rounds_to_target, simulate, SimOptions};
use skyfed_core::model::psnr_to_variance;
use skyfed_core::placement::weighted_centroid;
use skyfed_core::Scenario;

use crate::args::{Axis, Solver};
use crate::plan::plan;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub atl: f64,
    pub final_loss: Option<f64>,
    pub rounds_to_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub axis: Axis,
    /// Index into the scenario's devices for the PSNR and PER axes.
    pub device: usize,
    pub solver: Solver,
    pub train: bool,
}

/// Scenario with one parameter replaced.
///
/// `psnr` sets the device's noise variance from its PSNR (peak 1); `per`
/// sets its transmit power so its PER equals the value when the drone hovers
/// over the initial weighted centroid.
pub fn apply_axis(base: &Scenario, axis: Axis, device: usize, value: f64) -> Result<Scenario, CliError> {
    let mut s = base.clone();
    let dev_check = || {
        if device >= base.devices.len() {
            Err(CliError::Usage(format!("device index {device} out of range")))
        } else {
            Ok(())
        }
    };
    match axis {
        Axis::Psnr => {
            dev_check()?;
            s.devices[device].noise_var = psnr_to_variance(value, 1.0);
        }
        Axis::Per => {
            dev_check()?;
            if !(value > 0.0 && value < 1.0) {
                return Err(CliError::Usage(format!("PER value {value} must lie in (0, 1)")));
            }
            let c = weighted_centroid(&base.devices);
            let d = &base.devices[device];
            s.devices[device].tx_power = tx_power_for_per(&base.radio, d, d.position, c, value);
        }
        Axis::Altitude => s.radio.altitude = value,
        Axis::Vmax => s.v_max = value,
        Axis::Kappa => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(CliError::Usage(format!("kappa value {value} must be a positive integer")));
            }
            s.dwell = value as usize;
        }
    }
    s.validate().map_err(|e| CliError::Usage(format!("{} = {value}: {e}", axis.name())))?;
    Ok(s)
}

fn evaluate(s: &Scenario, opts: &SweepOptions) -> Result<SweepRow, CliError> {
    let traces = DeviceTraces::linear(&s.devices, s.horizon);
    let traj = plan(s, &traces, opts.solver)?;
    let atl = AtlProblem::new(s, &traces).atl(&traj).map_err(skyfed_core::Error::from)?.value;
    let (final_loss, rounds) = if opts.train {
        let fed = build_federation(s, false).map_err(skyfed_core::Error::from)?;
        let out = simulate(&fed, s, &traj, &traces, &SimOptions::default()).map_err(skyfed_core::Error::from)?;
        let rounds = s.target_loss.and_then(|t| rounds_to_target(&out, t));
        (Some(out.final_loss()), rounds)
    } else {
        (None, None)
    };
    Ok(SweepRow {
        value: 0.0,
        atl,
        final_loss,
        rounds_to_target: rounds,
    })
}

/// Evaluate every value in parallel; rows come back in input order.
pub fn run_sweep(base: &Scenario, values: &[f64], opts: &SweepOptions) -> Result<Vec<SweepRow>, CliError> {
    let scenarios = values
        .iter()
        .map(|&v| apply_axis(base, opts.axis, opts.device, v))
        .collect::<Result<Vec<_>, _>>()?;
    scenarios
        .par_iter()
        .zip(values)
        .map(|(s, &v)| evaluate(s, opts).map(|r| SweepRow { value: v, ..r }))
        .collect()
}

pub fn sweep_csv(axis: Axis, rows: &[SweepRow]) -> String {
    let mut s = format!("{},atl,final_loss,rounds_to_target\n", axis.name());
    for r in rows {
        let loss = r.final_loss.map(|v| v.to_string()).unwrap_or_default();
        let rounds = r.rounds_to_target.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{loss},{rounds}", r.value, r.atl).unwrap();
    }
    s
}
