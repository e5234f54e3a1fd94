//! Models trained by the simulator.
//!
//! Linear models keep one weight matrix `W` of shape `classes × (M + 1)`
//! (last column is the bias) flattened column-major into a vector. The MLP
//! stores `W1 (hidden × (M+1))` followed by `W2 (classes × (hidden+1))`.
//! Every loss is an average over samples plus `reg/2 · ‖w‖²`.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::data::Dataset;
use crate::model::{ModelKind, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub features: usize,
    pub classes: usize,
    pub hidden: usize,
    pub reg: f64,
}

fn one_hot(labels: &[usize], classes: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        y[(i, l)] = 1.0;
    }
    y
}

/// Row-wise softmax, in place.
fn softmax_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// `X W_fᵀ + 1 bᵀ` for a weight matrix with the bias in the last column.
fn affine(x: &DMatrix<f64>, w: &DMatrixView<'_, f64>) -> DMatrix<f64> {
    let m = x.ncols();
    let mut z = x * w.columns(0, m).transpose();
    let b = w.column(m);
    for mut row in z.row_iter_mut() {
        row += b.transpose();
    }
    z
}

/// Gradient of `mean_i r_iᵀ (W x̄_i)` with respect to `W`: `[RᵀX / n, colsum(R)/n]`.
fn affine_grad(x: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let m = x.ncols();
    let mut g = DMatrix::zeros(r.ncols(), m + 1);
    g.columns_mut(0, m).copy_from(&(r.transpose() * x));
    for c in 0..r.ncols() {
        g[(c, m)] = r.column(c).sum();
    }
    g / n
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl Model {
    pub fn new(spec: &ModelSpec, features: usize, classes: usize) -> Self {
        Self {
            kind: spec.kind,
            features,
            classes,
            hidden: spec.hidden,
            reg: spec.l2_reg,
        }
    }

    fn w1_len(&self) -> usize {
        self.hidden * (self.features + 1)
    }

    pub fn param_len(&self) -> usize {
        match self.kind {
            ModelKind::Quadratic | ModelKind::Logistic => self.classes * (self.features + 1),
            ModelKind::TinyMlp => self.w1_len() + self.classes * (self.hidden + 1),
        }
    }

    /// Zero weights for the convex models, He-style random weights for the MLP.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self.kind {
            ModelKind::Quadratic | ModelKind::Logistic => DVector::zeros(self.param_len()),
            ModelKind::TinyMlp => {
                let n1 = Normal::new(0.0, (2.0 / (self.features + 1) as f64).sqrt()).unwrap();
                let n2 = Normal::new(0.0, (1.0 / (self.hidden + 1) as f64).sqrt()).unwrap();
                let w1 = self.w1_len();
                DVector::from_fn(self.param_len(), |i, _| {
                    if i < w1 {
                        n1.sample(rng)
                    } else {
                        n2.sample(rng)
                    }
                })
            }
        }
    }

    fn linear_view<'a>(&self, w: &'a DVector<f64>) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(w.as_slice(), self.classes, self.features + 1)
    }

    fn mlp_views<'a>(&self, w: &'a DVector<f64>) -> (DMatrixView<'a, f64>, DMatrixView<'a, f64>) {
        let (a, b) = w.as_slice().split_at(self.w1_len());
        (
            DMatrixView::from_slice(a, self.hidden, self.features + 1),
            DMatrixView::from_slice(b, self.classes, self.hidden + 1),
        )
    }

    /// Raw outputs, one row per sample.
    pub fn outputs(&self, w: &DVector<f64>, data: &Dataset) -> DMatrix<f64> {
        match self.kind {
            ModelKind::Quadratic | ModelKind::Logistic => affine(&data.features, &self.linear_view(w)),
            ModelKind::TinyMlp => {
                let (w1, w2) = self.mlp_views(w);
                let h = affine(&data.features, &w1).map(|v| v.max(0.0));
                affine(&h, &w2)
            }
        }
    }

    fn data_loss(&self, z: &DMatrix<f64>, data: &Dataset) -> f64 {
        let n = data.len() as f64;
        match self.kind {
            ModelKind::Quadratic => {
                let r = z - one_hot(&data.labels, self.classes);
                0.5 * r.norm_squared() / n
            }
            ModelKind::Logistic | ModelKind::TinyMlp => {
                let mut total = 0.0;
                for (i, row) in z.row_iter().enumerate() {
                    let m = row.max();
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    total += lse - row[data.labels[i]];
                }
                total / n
            }
        }
    }

    pub fn loss(&self, w: &DVector<f64>, data: &Dataset) -> f64 {
        let z = self.outputs(w, data);
        self.data_loss(&z, data) + 0.5 * self.reg * w.norm_squared()
    }

    /// Output residuals `∂loss/∂z` per sample (not divided by `n`).
    fn residuals(&self, z: &DMatrix<f64>, data: &Dataset) -> DMatrix<f64> {
        let y = one_hot(&data.labels, self.classes);
        match self.kind {
            ModelKind::Quadratic => z - y,
            ModelKind::Logistic | ModelKind::TinyMlp => {
                let mut p = z.clone();
                softmax_rows(&mut p);
                p - y
            }
        }
    }

    pub fn gradient(&self, w: &DVector<f64>, data: &Dataset) -> DVector<f64> {
        let mut g = match self.kind {
            ModelKind::Quadratic | ModelKind::Logistic => {
                let z = self.outputs(w, data);
                let r = self.residuals(&z, data);
                let g = affine_grad(&data.features, &r);
                DVector::from_column_slice(g.as_slice())
            }
            ModelKind::TinyMlp => {
                let (w1, w2) = self.mlp_views(w);
                let pre = affine(&data.features, &w1);
                let h = pre.map(|v| v.max(0.0));
                let z = affine(&h, &w2);
                let r = self.residuals(&z, data);
                let g2 = affine_grad(&h, &r);
                let mut back = &r * w2.columns(0, self.hidden);
                back.zip_apply(&pre, |b, p| {
                    if p <= 0.0 {
                        *b = 0.0
                    }
                });
                let g1 = affine_grad(&data.features, &back);
                let mut out = Vec::with_capacity(self.param_len());
                out.extend_from_slice(g1.as_slice());
                out.extend_from_slice(g2.as_slice());
                DVector::from_vec(out)
            }
        };
        g.axpy(self.reg, w, 1.0);
        g
    }

    pub fn accuracy(&self, w: &DVector<f64>, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let z = self.outputs(w, data);
        let hits = z
            .row_iter()
            .zip(&data.labels)
            .filter(|(row, &l)| argmax(row.iter().copied()) == l)
            .count();
        hits as f64 / data.len() as f64
    }

    /// `X̄ᵀX̄ / n + reg·I`, the Hessian block shared by every output of the
    /// quadratic model.
    pub fn quadratic_hessian(&self, data: &Dataset) -> DMatrix<f64> {
        let n = data.len();
        let m = self.features;
        let mut xb = DMatrix::from_element(n, m + 1, 1.0);
        xb.columns_mut(0, m).copy_from(&data.features);
        let mut h = xb.transpose() * &xb / n as f64;
        for i in 0..=m {
            h[(i, i)] += self.reg;
        }
        h
    }

    /// Exact minimizer of the quadratic loss.
    pub fn quadratic_optimum(&self, data: &Dataset) -> Option<DVector<f64>> {
        let n = data.len();
        let m = self.features;
        let mut xb = DMatrix::from_element(n, m + 1, 1.0);
        xb.columns_mut(0, m).copy_from(&data.features);
        let rhs = xb.transpose() * one_hot(&data.labels, self.classes) / n as f64;
        let chol = self.quadratic_hessian(data).cholesky()?;
        // Columns of the solution are rows of W.
        let wt = chol.solve(&rhs);
        Some(DVector::from_column_slice(wt.transpose().as_slice()))
    }

    /// Per-sample quantities used to fit the gradient-growth and mixed
    /// Hessian constants: `(‖∇f_m‖², ‖∇²_wx f_m‖_op upper bound)`.
    pub fn per_sample_bounds(&self, w: &DVector<f64>, data: &Dataset) -> Vec<(f64, f64)> {
        let wv = self.linear_view(w);
        let z = self.outputs(w, data);
        let r = self.residuals(&z, data);
        let wf_norm = wv.columns(0, self.features).norm();
        let w_sq = w.norm_squared();
        let curvature = match self.kind {
            ModelKind::Quadratic => 1.0,
            // ‖diag(p) − ppᵀ‖ ≤ 1/2.
            _ => 0.5,
        };
        (0..data.len())
            .map(|i| {
                let x_sq = data.features.row(i).norm_squared() + 1.0;
                let ri = r.row(i);
                let grad_sq = ri.norm_squared() * x_sq
                    + 2.0 * self.reg * ri.dot(&z.row(i))
                    + self.reg * self.reg * w_sq;
                let mixed = ri.norm() + curvature * wf_norm * x_sq.sqrt();
                (grad_sq.max(0.0), mixed)
            })
            .collect()
    }
}

/// Per-device models after one full-batch gradient step.
pub fn local_step(
    model: &Model,
    w: &DVector<f64>,
    data: &Dataset,
    learning_rate: f64,
) -> Option<DVector<f64>> {
    let g = model.gradient(w, data);
    let next = w - g * learning_rate;
    next.iter().all(|v| v.is_finite()).then_some(next)
}

/// `Σ D_i C_i w_i / Σ D_i C_i`; `None` when nothing was delivered.
/// Models of undelivered devices are never read.
pub fn aggregate(
    locals: &[DVector<f64>],
    delivered: &[bool],
    sizes: &[u32],
) -> Option<DVector<f64>> {
    assert_eq!(locals.len(), delivered.len());
    assert_eq!(locals.len(), sizes.len());
    let total: f64 = delivered
        .iter()
        .zip(sizes)
        .filter(|(c, _)| **c)
        .map(|(_, d)| *d as f64)
        .sum();
    if total == 0.0 {
        return None;
    }
    let len = locals
        .iter()
        .zip(delivered)
        .find(|(_, c)| **c)
        .map_or(0, |(w, _)| w.len());
    let mut acc = DVector::zeros(len);
    for ((w, &c), &d) in locals.iter().zip(delivered).zip(sizes) {
        if c {
            acc.axpy(d as f64 / total, w, 1.0);
        }
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::data::make_synthetic;
    use crate::model::seeded_rng;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            l2_reg: 0.05,
            hidden: 6,
        }
    }

    fn fd_check(kind: ModelKind) {
        let data = make_synthetic(30, 4, 3, 0.2, &mut seeded_rng(1, "d"));
        let m = Model::new(&spec(kind), 4, 3);
        let mut w = m.init(&mut seeded_rng(1, "w"));
        for (i, v) in w.iter_mut().enumerate() {
            *v += 0.1 * ((i * 7 % 11) as f64 / 11.0 - 0.5);
        }
        let g = m.gradient(&w, &data);
        let h = 1e-6;
        for i in 0..w.len() {
            let mut a = w.clone();
            a[i] += h;
            let mut b = w.clone();
            b[i] -= h;
            let fd = (m.loss(&a, &data) - m.loss(&b, &data)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{kind:?} {i}: {fd} {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(ModelKind::Quadratic);
        fd_check(ModelKind::Logistic);
        fd_check(ModelKind::TinyMlp);
    }

    #[test]
    fn quadratic_step_closed_form() {
        let data = make_synthetic(25, 3, 2, 0.0, &mut seeded_rng(2, "d"));
        let m = Model::new(&spec(ModelKind::Quadratic), 3, 2);
        let w = DVector::from_fn(m.param_len(), |i, _| (i as f64 * 0.37).sin());
        let h = m.quadratic_hessian(&data);
        let wopt = m.quadratic_optimum(&data).unwrap();
        // ∇F(w) = (W − W*) H, row by row.
        let delta = DMatrix::from_column_slice(2, 4, (&w - &wopt).as_slice());
        let want = delta * &h;
        let got = m.gradient(&w, &data);
        let got = DMatrix::from_column_slice(2, 4, got.as_slice());
        assert!((got - want).norm() < 1e-12);
        assert!(m.gradient(&wopt, &data).norm() < 1e-12);
        let next = local_step(&m, &wopt, &data, 0.5).unwrap();
        assert!((next - &wopt).norm() < 1e-12);
    }

    #[test]
    fn aggregation_cases() {
        let a = DVector::from_vec(vec![0.0]);
        let b = DVector::from_vec(vec![4.0]);
        let both = aggregate(&[a.clone(), b.clone()], &[true, true], &[1, 3]).unwrap();
        assert_eq!(both[0], 3.0);
        let one = aggregate(&[a.clone(), b.clone()], &[false, true], &[1, 3]).unwrap();
        assert_eq!(one, b);
        let eq = aggregate(&[a.clone(), b.clone()], &[true, true], &[2, 2]).unwrap();
        assert_eq!(eq[0], 2.0);
        assert!(aggregate(&[a, b], &[false, false], &[1, 3]).is_none());
    }

    #[test]
    fn accuracy_on_separable_blobs() {
        let data = make_synthetic(200, 10, 2, 0.0, &mut seeded_rng(3, "d"));
        let m = Model::new(&spec(ModelKind::Quadratic), 10, 2);
        let w = m.quadratic_optimum(&data).unwrap();
        assert!(m.accuracy(&w, &data) > 0.9);
    }
}
