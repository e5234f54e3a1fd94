//! Line-oriented scenario format.
//!
//! ```text
//! # comment
//! [radio]
//! altitude = 20
//! [learning]
//! lipschitz = 1.0
//! [run]
//! horizon = 100
//! dwell = 5
//! [device]
//! position = 10, 25
//! psnr_db = 30
//! ```
//!
//! `[device]` may repeat; every other section appears at most once. Missing
//! keys take their defaults.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::{
    psnr_to_variance, dbm_to_mw, DatasetSpec, DeviceState, IdxSpec, LearningConstants, LosMode,
    ModelKind, ModelSpec, RadioEnvironment, Scenario, ScenarioError, SolverOptions,
    SyntheticSpec, Vec2, VelocityMode,
};

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    name: String,
    line: usize,
    entries: HashMap<String, Entry>,
}

fn syntax(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Syntax {
        line,
        message: message.into(),
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>, ScenarioError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unterminated section header"))?
                .trim();
            if !matches!(name, "radio" | "learning" | "run" | "device") {
                return Err(syntax(line, format!("unknown section [{name}]")));
            }
            if name != "device" && sections.iter().any(|s| s.name == name) {
                return Err(syntax(line, format!("section [{name}] appears twice")));
            }
            sections.push(Section {
                name: name.to_string(),
                line,
                entries: HashMap::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(syntax(line, "empty key"));
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| syntax(line, "key outside of any section"))?;
        if section.entries.contains_key(key) {
            return Err(syntax(line, format!("duplicate key `{key}`")));
        }
        section.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

/// Typed accessor that consumes entries so leftovers can be reported.
struct Reader<'a> {
    section: &'a mut Section,
}

impl Reader<'_> {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.section.entries.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|_| syntax(e.line, format!("cannot parse `{}` for `{key}`", e.value))),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ScenarioError> {
        Ok(self.parse::<f64>(key)?.unwrap_or(default))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, ScenarioError> {
        Ok(self.parse::<usize>(key)?.unwrap_or(default))
    }

    fn vec2(&mut self, key: &str) -> Result<Option<Vec2>, ScenarioError> {
        let Some(e) = self.take(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = e
            .value
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let bad = || syntax(e.line, format!("`{key}` expects two numbers `x, y`"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let x = parts[0].parse::<f64>().map_err(|_| bad())?;
        let y = parts[1].parse::<f64>().map_err(|_| bad())?;
        Ok(Some(Vec2::new(x, y)))
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|e| PathBuf::from(e.value))
    }

    fn finish(self) -> Result<(), ScenarioError> {
        if let Some((key, e)) = self
            .section
            .entries
            .iter()
            .min_by_key(|(_, e)| e.line)
        {
            return Err(syntax(
                e.line,
                format!("unknown key `{key}` in [{}]", self.section.name),
            ));
        }
        Ok(())
    }
}

fn read_radio(r: &mut Reader<'_>) -> Result<RadioEnvironment, ScenarioError> {
    let d = RadioEnvironment::default();
    let noise_psd = match (r.take("noise_psd"), r.take("noise_psd_dbm")) {
        (Some(e), None) => e
            .value
            .parse::<f64>()
            .map_err(|_| syntax(e.line, "cannot parse `noise_psd`"))?,
        (None, Some(e)) => dbm_to_mw(
            e.value
                .parse::<f64>()
                .map_err(|_| syntax(e.line, "cannot parse `noise_psd_dbm`"))?,
        ),
        (Some(_), Some(e)) => {
            return Err(syntax(e.line, "give either `noise_psd` or `noise_psd_dbm`"))
        }
        (None, None) => d.noise_psd,
    };
    let los_mode = match r.take("los_mode") {
        None => d.los_mode,
        Some(e) => match e.value.as_str() {
            "approximate" => LosMode::Approximate,
            "mixture" => LosMode::Mixture,
            other => return Err(syntax(e.line, format!("unknown los_mode `{other}`"))),
        },
    };
    Ok(RadioEnvironment {
        waterfall: r.f64_or("waterfall", d.waterfall)?,
        bandwidth: r.f64_or("bandwidth", d.bandwidth)?,
        noise_psd,
        pathloss_exp: r.f64_or("pathloss_exp", d.pathloss_exp)?,
        carrier: r.f64_or("carrier", d.carrier)?,
        extra_loss_los: r.f64_or("los_extra_loss", d.extra_loss_los)?,
        extra_loss_nlos: r.f64_or("nlos_extra_loss", d.extra_loss_nlos)?,
        los_a: r.f64_or("los_a", d.los_a)?,
        los_b: r.f64_or("los_b", d.los_b)?,
        altitude: r.f64_or("altitude", d.altitude)?,
        light_speed: r.f64_or("light_speed", d.light_speed)?,
        los_mode,
    })
}

fn read_learning(r: &mut Reader<'_>) -> Result<LearningConstants, ScenarioError> {
    let d = LearningConstants::default();
    Ok(LearningConstants {
        lipschitz: r.f64_or("lipschitz", d.lipschitz)?,
        strong_convexity: r.f64_or("strong_convexity", d.strong_convexity)?,
        c1: r.f64_or("c1", d.c1)?,
        c2: r.f64_or("c2", d.c2)?,
        eta: r.f64_or("eta", d.eta)?,
        feature_dim: r.usize_or("feature_dim", d.feature_dim)?,
    })
}

fn read_device(r: &mut Reader<'_>, index: usize) -> Result<DeviceState, ScenarioError> {
    let header = r.section.line;
    let id = r.parse::<u32>("id")?.unwrap_or(index as u32 + 1);
    let position = r
        .vec2("position")?
        .ok_or_else(|| syntax(header, format!("device {id} has no `position`")))?;
    let mut dev = DeviceState::new(id, position);
    if let Some(v) = r.vec2("velocity")? {
        dev.velocity = v;
    }
    if let Some(e) = r.take("dataset_size") {
        // Parse as signed so that `0` and negatives reach validation with a
        // named field instead of a bare parse error.
        let n = e
            .value
            .parse::<i64>()
            .map_err(|_| syntax(e.line, "cannot parse `dataset_size`"))?;
        dev.dataset_size = u32::try_from(n.max(0)).map_err(|_| {
            syntax(e.line, "`dataset_size` is too large")
        })?;
    }
    match (r.parse::<f64>("noise_var")?, r.parse::<f64>("psnr_db")?) {
        (Some(_), Some(_)) => {
            return Err(ScenarioError::invalid(
                format!("device[{id}].noise_var"),
                "give either noise_var or psnr_db",
            ))
        }
        (Some(v), None) => dev.noise_var = v,
        (None, Some(p)) => dev.noise_var = psnr_to_variance(p, 1.0),
        (None, None) => {}
    }
    dev.tx_power = r.f64_or("tx_power", dev.tx_power)?;
    dev.fading_mean = r.f64_or("fading_mean", dev.fading_mean)?;
    Ok(dev)
}

struct RunSection {
    horizon: usize,
    dwell: usize,
    v_max: f64,
    seed: u64,
    learning_rate: Option<f64>,
    target_loss: Option<f64>,
    model: ModelSpec,
    dataset: DatasetSpec,
    solver: SolverOptions,
}

fn read_run(r: &mut Reader<'_>) -> Result<RunSection, ScenarioError> {
    let ms = ModelSpec::default();
    let kind = match r.take("model") {
        None => ms.kind,
        Some(e) => e.value.parse::<ModelKind>().map_err(|m| syntax(e.line, m))?,
    };
    let model = ModelSpec {
        kind,
        l2_reg: r.f64_or("l2_reg", ms.l2_reg)?,
        hidden: r.usize_or("hidden", ms.hidden)?,
    };
    let dataset_kind = r.take("dataset");
    let ss = SyntheticSpec::default();
    let synthetic = SyntheticSpec {
        classes: r.usize_or("classes", ss.classes)?,
        label_skew: r.f64_or("label_skew", ss.label_skew)?,
        separation: r.f64_or("separation", ss.separation)?,
        test_samples: r.usize_or("test_samples", ss.test_samples)?,
    };
    let images = r.path("idx_images");
    let labels = r.path("idx_labels");
    let test_images = r.path("idx_test_images");
    let test_labels = r.path("idx_test_labels");
    let dataset = match dataset_kind {
        None => DatasetSpec::Synthetic(synthetic),
        Some(e) => match e.value.as_str() {
            "synthetic" => DatasetSpec::Synthetic(synthetic),
            "idx" => DatasetSpec::Idx(IdxSpec {
                images: images
                    .ok_or_else(|| syntax(e.line, "dataset = idx requires `idx_images`"))?,
                labels: labels
                    .ok_or_else(|| syntax(e.line, "dataset = idx requires `idx_labels`"))?,
                test_images,
                test_labels,
            }),
            other => return Err(syntax(e.line, format!("unknown dataset `{other}`"))),
        },
    };
    let so = SolverOptions::default();
    let velocity_mode = match r.take("velocity_mode") {
        None => so.velocity_mode,
        Some(e) => match e.value.as_str() {
            "radial" => VelocityMode::Radial,
            "componentwise" => VelocityMode::Componentwise,
            other => return Err(syntax(e.line, format!("unknown velocity_mode `{other}`"))),
        },
    };
    let solver = SolverOptions {
        trust_radius: r.f64_or("trust_radius", so.trust_radius)?,
        placement_tol: r.f64_or("placement_tol", so.placement_tol)?,
        placement_max_iters: r.usize_or("placement_max_iters", so.placement_max_iters)?,
        velocity_mode,
        closed_loop: r.parse::<bool>("closed_loop")?.unwrap_or(so.closed_loop),
        horizon_max_iters: r.usize_or("horizon_max_iters", so.horizon_max_iters)?,
    };
    Ok(RunSection {
        horizon: r.usize_or("horizon", 100)?,
        dwell: r.usize_or("dwell", 5)?,
        v_max: r.f64_or("v_max", 5.0)?,
        seed: r.parse::<u64>("seed")?.unwrap_or(0),
        learning_rate: r.parse::<f64>("learning_rate")?,
        target_loss: r.parse::<f64>("target_loss")?,
        model,
        dataset,
        solver,
    })
}

/// Parse and validate a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sections = split_sections(text)?;
    let mut radio = RadioEnvironment::default();
    let mut constants = LearningConstants::default();
    let mut run = None;
    let mut devices = Vec::new();
    for section in sections.iter_mut() {
        let name = section.name.clone();
        let mut r = Reader { section };
        match name.as_str() {
            "radio" => radio = read_radio(&mut r)?,
            "learning" => constants = read_learning(&mut r)?,
            "run" => run = Some(read_run(&mut r)?),
            _ => {
                let index = devices.len();
                devices.push(read_device(&mut r, index)?);
            }
        }
        r.finish()?;
    }
    let run = match run {
        Some(run) => run,
        None => read_run(&mut Reader {
            section: &mut Section {
                name: "run".into(),
                line: 0,
                entries: HashMap::new(),
            },
        })?,
    };
    let scenario = Scenario {
        devices,
        learning_rate: run.learning_rate.unwrap_or(1.0 / constants.lipschitz),
        radio,
        constants,
        horizon: run.horizon,
        dwell: run.dwell,
        v_max: run.v_max,
        seed: run.seed,
        dataset: run.dataset,
        model: run.model,
        target_loss: run.target_loss,
        solver: run.solver,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e9).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub(super) fn serialize(s: &Scenario) -> String {
    let mut out = String::new();
    let r = &s.radio;
    let _ = writeln!(out, "[radio]");
    for (k, v) in [
        ("altitude", r.altitude),
        ("waterfall", r.waterfall),
        ("bandwidth", r.bandwidth),
        ("noise_psd", r.noise_psd),
        ("pathloss_exp", r.pathloss_exp),
        ("carrier", r.carrier),
        ("los_extra_loss", r.extra_loss_los),
        ("nlos_extra_loss", r.extra_loss_nlos),
        ("los_a", r.los_a),
        ("los_b", r.los_b),
        ("light_speed", r.light_speed),
    ] {
        let _ = writeln!(out, "{k} = {}", num(v));
    }
    let mode = match r.los_mode {
        LosMode::Approximate => "approximate",
        LosMode::Mixture => "mixture",
    };
    let _ = writeln!(out, "los_mode = {mode}");

    let c = &s.constants;
    let _ = writeln!(out, "\n[learning]");
    for (k, v) in [
        ("lipschitz", c.lipschitz),
        ("strong_convexity", c.strong_convexity),
        ("c1", c.c1),
        ("c2", c.c2),
        ("eta", c.eta),
    ] {
        let _ = writeln!(out, "{k} = {}", num(v));
    }
    let _ = writeln!(out, "feature_dim = {}", c.feature_dim);

    let _ = writeln!(out, "\n[run]");
    let _ = writeln!(out, "horizon = {}", s.horizon);
    let _ = writeln!(out, "dwell = {}", s.dwell);
    let _ = writeln!(out, "v_max = {}", num(s.v_max));
    let _ = writeln!(out, "seed = {}", s.seed);
    let _ = writeln!(out, "learning_rate = {}", num(s.learning_rate));
    if let Some(t) = s.target_loss {
        let _ = writeln!(out, "target_loss = {}", num(t));
    }
    let _ = writeln!(out, "model = {}", s.model.kind.as_str());
    let _ = writeln!(out, "l2_reg = {}", num(s.model.l2_reg));
    let _ = writeln!(out, "hidden = {}", s.model.hidden);
    match &s.dataset {
        DatasetSpec::Synthetic(d) => {
            let _ = writeln!(out, "dataset = synthetic");
            let _ = writeln!(out, "classes = {}", d.classes);
            let _ = writeln!(out, "label_skew = {}", num(d.label_skew));
            let _ = writeln!(out, "separation = {}", num(d.separation));
            let _ = writeln!(out, "test_samples = {}", d.test_samples);
        }
        DatasetSpec::Idx(d) => {
            let _ = writeln!(out, "dataset = idx");
            let _ = writeln!(out, "idx_images = {}", d.images.display());
            let _ = writeln!(out, "idx_labels = {}", d.labels.display());
            if let Some(p) = &d.test_images {
                let _ = writeln!(out, "idx_test_images = {}", p.display());
            }
            if let Some(p) = &d.test_labels {
                let _ = writeln!(out, "idx_test_labels = {}", p.display());
            }
        }
    }
    let o = &s.solver;
    let _ = writeln!(out, "trust_radius = {}", num(o.trust_radius));
    let _ = writeln!(out, "placement_tol = {}", num(o.placement_tol));
    let _ = writeln!(out, "placement_max_iters = {}", o.placement_max_iters);
    let vm = match o.velocity_mode {
        VelocityMode::Radial => "radial",
        VelocityMode::Componentwise => "componentwise",
    };
    let _ = writeln!(out, "velocity_mode = {vm}");
    let _ = writeln!(out, "closed_loop = {}", o.closed_loop);
    let _ = writeln!(out, "horizon_max_iters = {}", o.horizon_max_iters);

    for d in &s.devices {
        let _ = writeln!(out, "\n[device]");
        let _ = writeln!(out, "id = {}", d.id);
        let _ = writeln!(out, "position = {}, {}", num(d.position.x), num(d.position.y));
        let _ = writeln!(out, "velocity = {}, {}", num(d.velocity.x), num(d.velocity.y));
        let _ = writeln!(out, "dataset_size = {}", d.dataset_size);
        let _ = writeln!(out, "noise_var = {}", num(d.noise_var));
        let _ = writeln!(out, "tx_power = {}", num(d.tx_power));
        let _ = writeln!(out, "fading_mean = {}", num(d.fading_mean));
    }
    out
}
