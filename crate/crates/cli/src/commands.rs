use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use skyfed_core::bound::{AtlProblem, DeviceTraces};
use skyfed_core::fedsim::{build_federation, round_log_csv, rounds_to_target, simulate, SimOptions};
use skyfed_core::model::parse_scenario;
use skyfed_core::placement::{optimize_placement, PlacementObjective, PlacementOptions};
use skyfed_core::trajectory::{trajectory_from_csv, trajectory_to_csv};
use skyfed_core::{Scenario, Trajectory};

use crate::args::{Command, Common, Solver};
use crate::output::{version, OutputDir, RunManifest};
use crate::plan::plan;
use crate::svg::{line_chart, Series};
use crate::sweep::{run_sweep, sweep_csv, SweepOptions};
use crate::CliError;

fn load_scenario(common: &Common) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(&common.scenario)
        .map_err(|e| CliError::Io(format!("{}: {e}", common.scenario.display())))?;
    let mut s = parse_scenario(&text).map_err(skyfed_core::Error::from)?;
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    Ok(s)
}

/// Stage the output directory and write the manifest into it.
fn open_output(common: &Common, command: &str, seed: u64) -> Result<OutputDir, CliError> {
    let out = OutputDir::create(&common.out, common.force)?;
    let manifest = RunManifest {
        scenario: common.scenario.clone(),
        command: command.to_string(),
        output: common.out.clone(),
        seed,
        version: version(),
    };
    out.write("manifest.txt", &manifest.to_text())?;
    Ok(out)
}

pub(crate) fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Place { common } => place(&common),
        Command::Trajectory {
            common,
            solver,
            closed_loop,
        } => trajectory(&common, solver, closed_loop),
        Command::Train {
            common,
            solver,
            trajectory,
            draw,
            batch,
            no_optimum,
        } => train(&common, solver, trajectory.as_deref(), draw, batch, no_optimum),
        Command::Sweep {
            common,
            axis,
            values,
            device,
            solver,
            no_train,
        } => {
            let s = load_scenario(&common)?;
            let device = match device {
                None => s.devices.len().saturating_sub(1),
                Some(id) => s
                    .devices
                    .iter()
                    .position(|d| d.id == id)
                    .ok_or_else(|| CliError::Usage(format!("no device with id {id}")))?,
            };
            let opts = SweepOptions {
                axis,
                device,
                solver,
                train: !no_train,
            };
            sweep(&common, &s, &values, &opts)
        }
    }
}

fn place(common: &Common) -> Result<(), CliError> {
    let s = load_scenario(common)?;
    let out = open_output(common, "place", s.seed)?;
    let obj = PlacementObjective::from_scenario(&s);
    let res = optimize_placement(&obj, &PlacementOptions::from_scenario(&s)).map_err(skyfed_core::Error::from)?;

    let mut csv = String::from("iteration,x,y,objective\n");
    for (i, p) in res.trace.iter().enumerate() {
        writeln!(csv, "{i},{},{},{}", p.x, p.y, obj.ratio(*p)).unwrap();
    }
    out.write("placement.csv", &csv)?;
    out.commit()?;
    println!("position = ({}, {})", res.position.x, res.position.y);
    println!("objective = {}", res.objective);
    println!("iterations = {}", res.iterations);
    Ok(())
}

fn trajectory_svg(s: &Scenario, traces: &DeviceTraces, traj: &Trajectory) -> String {
    let mut series = vec![Series::new(
        "drone",
        traj.waypoints.iter().map(|p| (p.x, p.y)).collect(),
    )];
    for (i, d) in s.devices.iter().enumerate() {
        let pts = (1..=s.horizon)
            .map(|t| {
                let p = traces.at(t)[i];
                (p.x, p.y)
            })
            .collect();
        series.push(Series::new(format!("device {}", d.id), pts));
    }
    line_chart("Drone trajectory", "x (m)", "y (m)", &series, true)
}

fn trajectory(common: &Common, solver: Solver, closed_loop: bool) -> Result<(), CliError> {
    let mut s = load_scenario(common)?;
    s.solver.closed_loop |= closed_loop;
    let out = open_output(common, &format!("trajectory --solver {}", solver.name()), s.seed)?;
    let traces = DeviceTraces::linear(&s.devices, s.horizon);
    let traj = plan(&s, &traces, solver)?;
    let atl = AtlProblem::new(&s, &traces).atl(&traj).map_err(skyfed_core::Error::from)?.value;

    let meta = [("solver", solver.name().to_string()), ("atl", atl.to_string())];
    out.write("trajectory.csv", &trajectory_to_csv(&traj, &meta))?;
    out.write("atl.txt", &format!("{atl}\n"))?;
    out.write("trajectory.svg", &trajectory_svg(&s, &traces, &traj))?;
    out.commit()?;
    println!("solver = {}", solver.name());
    println!("waypoints = {}", traj.waypoints.len());
    println!("atl = {atl}");
    Ok(())
}

fn train(
    common: &Common,
    solver: Solver,
    source: Option<&Path>,
    draw: u64,
    batch: Option<usize>,
    no_optimum: bool,
) -> Result<(), CliError> {
    let s = load_scenario(common)?;
    let label = match source {
        Some(p) => format!("train --trajectory {}", p.display()),
        None => format!("train --solver {}", solver.name()),
    };
    let out = open_output(common, &label, s.seed)?;
    let traces = DeviceTraces::linear(&s.devices, s.horizon);
    let traj = match source {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let traj = trajectory_from_csv(&text).map_err(skyfed_core::Error::from)?;
            traj.check(s.horizon)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            traj
        }
        None => plan(&s, &traces, solver)?,
    };
    let fed = build_federation(&s, !no_optimum).map_err(skyfed_core::Error::from)?;
    let opts = SimOptions {
        draw,
        batch,
        ..SimOptions::default()
    };
    let run = simulate(&fed, &s, &traj, &traces, &opts).map_err(skyfed_core::Error::from)?;

    let loss = run.records.iter().map(|r| (r.round as f64, r.loss)).collect();
    let acc = run.records.iter().map(|r| (r.round as f64, r.accuracy)).collect();
    let chart = line_chart(
        "Learning curve",
        "round",
        "value",
        &[Series::new("loss", loss), Series::new("accuracy", acc)],
        false,
    );
    out.write("rounds.csv", &round_log_csv(&run))?;
    out.write("learning.svg", &chart)?;
    out.write("trajectory.csv", &trajectory_to_csv(&traj, &[]))?;
    out.commit()?;

    println!("initial_loss = {}", run.initial_loss);
    println!("final_loss = {}", run.final_loss());
    if let Some(last) = run.records.last() {
        println!("final_accuracy = {}", last.accuracy);
    }
    if let Some(target) = s.target_loss {
        match rounds_to_target(&run, target) {
            Some(t) => println!("rounds_to_target = {t}"),
            None => println!("rounds_to_target = not reached"),
        }
    }
    Ok(())
}

fn sweep(common: &Common, s: &Scenario, values: &[f64], opts: &SweepOptions) -> Result<(), CliError> {
    let out = open_output(
        common,
        &format!("sweep --axis {} --solver {}", opts.axis.name(), opts.solver.name()),
        s.seed,
    )?;
    let rows = run_sweep(s, values, opts)?;
    let mut series = vec![Series::new("ATL", rows.iter().map(|r| (r.value, r.atl)).collect())];
    if opts.train {
        series.push(Series::new(
            "final loss",
            rows.iter().filter_map(|r| r.final_loss.map(|l| (r.value, l))).collect(),
        ));
    }
    let csv = sweep_csv(opts.axis, &rows);
    out.write("sweep.csv", &csv)?;
    out.write(
        "sweep.svg",
        &line_chart(&format!("Sweep over {}", opts.axis.name()), opts.axis.name(), "value", &series, false),
    )?;
    out.commit()?;
    print!("{csv}");
    Ok(())
}
