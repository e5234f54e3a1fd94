//! The training loop: local steps, Bernoulli delivery, weighted aggregation.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::data::{add_sensor_noise, BlobGenerator, DataSource, Dataset, LocalDataset};
use super::idx::load_idx;
use super::models::{aggregate, local_step, Model};
use super::SimError;
use crate::bound::DeviceTraces;
use crate::channel::packet_error_rates;
use crate::model::{seeded_rng, DatasetSpec, ModelKind, Scenario, Trajectory, Vec2};

/// Everything needed to train: the model, per-device noisy data, and the
/// clean global data the loss and gap are measured on.
#[derive(Debug, Clone)]
pub struct Federation {
    pub model: Model,
    pub locals: Vec<LocalDataset>,
    pub sizes: Vec<u32>,
    pub ids: Vec<u32>,
    /// Union of the devices' data before sensor noise.
    pub clean: Dataset,
    pub test: Dataset,
    pub init: DVector<f64>,
    pub optimum: Option<DVector<f64>>,
    pub optimum_loss: Option<f64>,
    /// Quadratic models only: the shared Hessian block on `clean`.
    hessian: Option<DMatrix<f64>>,
}

impl Federation {
    /// `F(w) − F(w*)` on the clean global data, when the optimum is known.
    /// Quadratic models use the exact form `½ tr(Δ H Δᵀ)` to avoid
    /// cancellation near the optimum.
    pub fn gap(&self, w: &DVector<f64>, loss: f64) -> Option<f64> {
        let opt = self.optimum.as_ref()?;
        if let Some(h) = &self.hessian {
            let m = self.model.features + 1;
            let delta = DMatrix::from_column_slice(self.model.classes, m, (w - opt).as_slice());
            let q = &delta * h;
            return Some(0.5 * q.component_mul(&delta).sum());
        }
        Some(loss - self.optimum_loss?)
    }

    pub fn total_samples(&self) -> usize {
        self.sizes.iter().map(|&d| d as usize).sum()
    }
}

/// Minimize the regularized logistic loss with Nesterov's method.
fn logistic_optimum(model: &Model, data: &Dataset) -> DVector<f64> {
    let l = super::constants::logistic_smoothness(model, data);
    let mu = model.reg;
    let q = (l / mu).sqrt();
    let beta = (q - 1.0) / (q + 1.0);
    let mut x = DVector::zeros(model.param_len());
    let mut prev = x.clone();
    for _ in 0..50_000 {
        let y = &x + (&x - &prev) * beta;
        let g = model.gradient(&y, data);
        if g.norm() <= 1e-11 {
            return y;
        }
        prev = std::mem::replace(&mut x, y - g / l);
    }
    x
}

/// Build device datasets, noise and the optimum for `scenario`.
///
/// Synthetic data draws class means from the `means` stream and device `i`'s
/// samples from `data/{id}` (dominant class `i mod classes`). IDX data is
/// split sequentially by dataset size. Noise comes from `noise/{id}` and is
/// applied once. `with_optimum` controls whether the logistic optimum is
/// computed (the quadratic optimum is always exact and cheap).
pub fn build_federation(scenario: &Scenario, with_optimum: bool) -> Result<Federation, SimError> {
    let seed = scenario.seed;
    let m = scenario.constants.feature_dim;
    let (clean_parts, test, source) = match &scenario.dataset {
        DatasetSpec::Synthetic(spec) => {
            if spec.classes < 2 {
                return Err(SimError::Invalid("synthetic data needs at least 2 classes".into()));
            }
            let gen = BlobGenerator::new(spec.classes, m, spec.separation, &mut seeded_rng(seed, "means"));
            let parts: Vec<Dataset> = scenario
                .devices
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let mut rng = seeded_rng(seed, &format!("data/{}", d.id));
                    gen.generate(d.dataset_size as usize, spec.label_skew, i, &mut rng)
                })
                .collect();
            let test = gen.generate(spec.test_samples, 0.0, 0, &mut seeded_rng(seed, "test"));
            (parts, test, DataSource::Synthetic)
        }
        DatasetSpec::Idx(spec) => {
            let all = load_idx(&spec.images, &spec.labels)?;
            if all.feature_dim() != m {
                return Err(SimError::FeatureMismatch {
                    expected: m,
                    found: all.feature_dim(),
                });
            }
            let needed: usize = scenario.devices.iter().map(|d| d.dataset_size as usize).sum();
            if needed > all.len() {
                return Err(SimError::DatasetTooSmall {
                    needed,
                    available: all.len(),
                });
            }
            let mut start = 0;
            let mut parts = Vec::new();
            for d in &scenario.devices {
                parts.push(all.slice(start, d.dataset_size as usize));
                start += d.dataset_size as usize;
            }
            let test = match (&spec.test_images, &spec.test_labels) {
                (Some(i), Some(l)) => load_idx(i, l)?,
                _ => Dataset {
                    features: DMatrix::zeros(0, m),
                    labels: vec![],
                    classes: all.classes,
                },
            };
            (parts, test, DataSource::Idx)
        }
    };
    let clean = Dataset::concat(&clean_parts.iter().collect::<Vec<_>>());
    let test = if test.is_empty() { clean.clone() } else { test };
    let locals: Vec<LocalDataset> = clean_parts
        .into_iter()
        .zip(&scenario.devices)
        .map(|(part, d)| {
            let mut rng = seeded_rng(seed, &format!("noise/{}", d.id));
            add_sensor_noise(part, d.noise_var, source, &mut rng)
        })
        .collect();

    let model = Model::new(&scenario.model, m, clean.classes);
    let init = model.init(&mut seeded_rng(seed, "init"));
    let (optimum, hessian) = match model.kind {
        ModelKind::Quadratic => (model.quadratic_optimum(&clean), Some(model.quadratic_hessian(&clean))),
        ModelKind::Logistic if with_optimum => (Some(logistic_optimum(&model, &clean)), None),
        _ => (None, None),
    };
    let optimum_loss = optimum.as_ref().map(|w| model.loss(w, &clean));
    Ok(Federation {
        model,
        locals,
        sizes: scenario.devices.iter().map(|d| d.dataset_size).collect(),
        ids: scenario.devices.iter().map(|d| d.id).collect(),
        clean,
        test,
        init,
        optimum,
        optimum_loss,
        hessian,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub pers: Vec<f64>,
    pub delivered: Vec<bool>,
    pub drone: Vec2,
    pub loss: f64,
    pub accuracy: f64,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub initial_gap: Option<f64>,
    /// Rounds `1..=T`.
    pub records: Vec<RoundRecord>,
}

impl SimOutput {
    /// Loss before round `t` finished: `t = 0` is the initial model.
    pub fn loss_at(&self, t: usize) -> f64 {
        if t == 0 {
            self.initial_loss
        } else {
            self.records[t - 1].loss
        }
    }

    pub fn gap_at(&self, t: usize) -> Option<f64> {
        if t == 0 {
            self.initial_gap
        } else {
            self.records[t - 1].gap
        }
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOptions {
    /// Index of the delivery draw; each draw is an independent realization
    /// of the packet drops.
    pub draw: u64,
    /// Use these PERs every round instead of the channel model.
    pub fixed_per: Option<Vec<f64>>,
    /// Samples per local step; `None` is the full local dataset.
    pub batch: Option<usize>,
}

fn minibatch(data: &Dataset, size: usize, rng: &mut impl Rng) -> Dataset {
    let n = data.len();
    let mut idx = sample(rng, n, size.min(n)).into_vec();
    idx.sort_unstable();
    Dataset {
        features: data.features.select_rows(idx.iter()),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
        classes: data.classes,
    }
}

/// Train for `scenario.horizon` rounds with the drone following `trajectory`.
///
/// Round `t` uses the drone's round-`t` position and the devices' round-`t`
/// positions from `traces`. Device `i` delivers with probability `1 − e_it`,
/// drawn from the stream `delivery/{draw}/{id}/{t}`, so results do not
/// depend on the worker count. A round where nothing is delivered keeps the
/// previous global model.
pub fn simulate(
    fed: &Federation,
    scenario: &Scenario,
    trajectory: &Trajectory,
    traces: &DeviceTraces,
    opts: &SimOptions,
) -> Result<SimOutput, SimError> {
    let horizon = scenario.horizon;
    let drone = trajectory.expand(horizon)?;
    if traces.horizon() < horizon {
        return Err(SimError::Invalid(format!(
            "device traces cover {} rounds, need {horizon}",
            traces.horizon()
        )));
    }
    if let Some(p) = &opts.fixed_per {
        if p.len() != fed.locals.len() || p.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(SimError::Invalid("fixed PERs must be one value in [0, 1] per device".into()));
        }
    }
    let model = &fed.model;
    let lr = scenario.learning_rate;
    let mut w = fed.init.clone();
    let initial_loss = model.loss(&w, &fed.clean);
    let mut out = SimOutput {
        initial_loss,
        initial_accuracy: model.accuracy(&w, &fed.test),
        initial_gap: fed.gap(&w, initial_loss),
        records: Vec::with_capacity(horizon),
    };
    for t in 1..=horizon {
        let pos = drone[t - 1];
        let pers = match &opts.fixed_per {
            Some(p) => p.clone(),
            None => packet_error_rates(&scenario.radio, &scenario.devices, traces.at(t), pos),
        };
        let delivered: Vec<bool> = fed
            .ids
            .iter()
            .zip(&pers)
            .map(|(id, &e)| {
                let mut rng = seeded_rng(scenario.seed, &format!("delivery/{}/{id}/{t}", opts.draw));
                rng.random::<f64>() >= e
            })
            .collect();
        let locals: Vec<Option<DVector<f64>>> = (0..fed.locals.len())
            .into_par_iter()
            .map(|i| {
                if !delivered[i] {
                    return Ok(None);
                }
                let data = &fed.locals[i].data;
                let next = match opts.batch {
                    Some(b) => {
                        let label = format!("batch/{}/{}/{t}", opts.draw, fed.ids[i]);
                        let batch = minibatch(data, b, &mut seeded_rng(scenario.seed, &label));
                        local_step(model, &w, &batch, lr)
                    }
                    None => local_step(model, &w, data, lr),
                };
                next.map(Some).ok_or(SimError::NonFinite {
                    device: fed.ids[i],
                    round: t,
                })
            })
            .collect::<Result<_, _>>()?;
        let dummy = DVector::zeros(0);
        let models: Vec<DVector<f64>> = locals
            .into_iter()
            .map(|m| m.unwrap_or_else(|| dummy.clone()))
            .collect();
        if let Some(next) = aggregate(&models, &delivered, &fed.sizes) {
            w = next;
        }
        let loss = model.loss(&w, &fed.clean);
        out.records.push(RoundRecord {
            round: t,
            pers,
            delivered,
            drone: pos,
            loss,
            accuracy: model.accuracy(&w, &fed.test),
            gap: fed.gap(&w, loss),
        });
    }
    Ok(out)
}

/// First round whose loss is at or below `target`.
pub fn rounds_to_target(out: &SimOutput, target: f64) -> Option<usize> {
    out.records.iter().find(|r| r.loss <= target).map(|r| r.round)
}

/// `round,loss,accuracy,gap,drone_x,drone_y,e_1..e_N,c_1..c_N`, one row per
/// round. An unknown gap is left empty.
pub fn round_log_csv(out: &SimOutput) -> String {
    let n = out.records.first().map_or(0, |r| r.pers.len());
    let mut s = String::from("round,loss,accuracy,gap,drone_x,drone_y");
    for i in 1..=n {
        write!(s, ",e_{i}").unwrap();
    }
    for i in 1..=n {
        write!(s, ",c_{i}").unwrap();
    }
    s.push('\n');
    for r in &out.records {
        let gap = r.gap.map(|g| g.to_string()).unwrap_or_default();
        write!(s, "{},{},{},{},{},{}", r.round, r.loss, r.accuracy, gap, r.drone.x, r.drone.y).unwrap();
        for e in &r.pers {
            write!(s, ",{e}").unwrap();
        }
        for &c in &r.delivered {
            write!(s, ",{}", c as u8).unwrap();
        }
        s.push('\n');
    }
    s
}
