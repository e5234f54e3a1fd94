//! Estimating the learning constants of a model on a dataset.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::data::Dataset;
use super::models::Model;
use super::SimError;
use crate::model::{seeded_rng, LearningConstants, ModelKind, StreamRng};

/// Sampling budget for the gradient-growth and mixed-Hessian fits.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    /// Random weight vectors drawn around the optimum.
    pub weight_samples: usize,
    /// Data samples used per weight vector; `None` uses all of them.
    pub data_samples: Option<usize>,
    /// Multiplier applied to the fitted intercept `c1`.
    pub margin: f64,
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            weight_samples: 400,
            data_samples: Some(500),
            margin: 1.05,
            seed: 0,
        }
    }
}

fn augmented(data: &Dataset) -> DMatrix<f64> {
    let (n, m) = data.features.shape();
    let mut xb = DMatrix::from_element(n, m + 1, 1.0);
    xb.columns_mut(0, m).copy_from(&data.features);
    xb
}

fn gram_max_eig(data: &Dataset) -> f64 {
    let xb = augmented(data);
    let g = xb.transpose() * &xb / data.len() as f64;
    SymmetricEigen::new(g).eigenvalues.max()
}

/// Smoothness of the regularized softmax loss: the softmax Hessian
/// `diag(p) − ppᵀ` never exceeds `1/2`, so `L = λ_max(X̄ᵀX̄/n)/2 + reg`.
pub fn logistic_smoothness(model: &Model, data: &Dataset) -> f64 {
    gram_max_eig(data) / 2.0 + model.reg
}

/// Uniform draw from the ball of radius `r` around `center`.
pub(crate) fn sample_ball(center: &DVector<f64>, r: f64, rng: &mut StreamRng) -> DVector<f64> {
    let n = center.len();
    let mut dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = dir.norm();
    if norm > 0.0 {
        dir /= norm;
    }
    let radius = r * rng.random::<f64>().powf(1.0 / n as f64);
    center + dir * radius
}

/// Gradient-growth sample at `w`: `(‖∇F(w)‖², max_m ‖∇f_m(w)‖², max mixed bound)`.
pub(crate) fn growth_sample(model: &Model, w: &DVector<f64>, full: &Dataset, sub: &Dataset) -> (f64, f64, f64) {
    let per = model.per_sample_bounds(w, sub);
    let y = per.iter().map(|p| p.0).fold(0.0, f64::max);
    let mixed = per.iter().map(|p| p.1).fold(0.0, f64::max);
    (model.gradient(w, full).norm_squared(), y, mixed)
}

/// Estimate `L, μ, c1, c2, η` for `model` on `data`; `M` is the feature
/// count.
///
/// `L` and `μ` are exact for the quadratic model (extreme Hessian
/// eigenvalues) and the standard bounds for logistic regression. `c1, c2`
/// come from a least-squares fit of `max_m ‖∇f_m‖²` against `‖∇F‖²` over
/// weights drawn uniformly from a ball around the optimum, with `c1` raised
/// to cover every fitted point. `η` is the largest squared mixed-Hessian
/// norm bound seen.
pub fn estimate_constants(
    model: &Model,
    data: &Dataset,
    optimum: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<LearningConstants, SimError> {
    let (l, mu) = match model.kind {
        ModelKind::Quadratic => {
            let h = model.quadratic_hessian(data);
            let eig = SymmetricEigen::new(h).eigenvalues;
            (eig.max(), eig.min())
        }
        ModelKind::Logistic => (logistic_smoothness(model, data), model.reg),
        ModelKind::TinyMlp => {
            return Err(SimError::unsupported("constant estimation", model.kind));
        }
    };
    let mut rng = seeded_rng(opts.seed, "constants");
    let sub = match opts.data_samples {
        Some(k) if k < data.len() => {
            let mut idx = sample(&mut rng, data.len(), k).into_vec();
            idx.sort_unstable();
            Dataset {
                features: data.features.select_rows(idx.iter()),
                labels: idx.iter().map(|&i| data.labels[i]).collect(),
                classes: data.classes,
            }
        }
        _ => data.clone(),
    };
    let radius = 1.5 * optimum.norm() + 1.0;
    let samples: Vec<(f64, f64, f64)> = (0..opts.weight_samples)
        .map(|_| {
            let w = sample_ball(optimum, radius, &mut rng);
            growth_sample(model, &w, data, &sub)
        })
        .collect();
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let c2 = if sxx > 0.0 { (sxy / sxx).max(1e-6) } else { 1e-6 };
    let c1 = samples
        .iter()
        .map(|s| s.1 - c2 * s.0)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
        * opts.margin;
    let eta = samples.iter().map(|s| s.2 * s.2).fold(0.0, f64::max);
    Ok(LearningConstants {
        lipschitz: l,
        strong_convexity: mu,
        c1: c1.max(f64::MIN_POSITIVE),
        c2,
        eta,
        feature_dim: model.features,
    })
}
