//! Datasets: Gaussian class blobs and frozen sensor noise.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Labeled samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Rows `start..start+n`.
    pub fn slice(&self, start: usize, n: usize) -> Dataset {
        Dataset {
            features: self.features.rows(start, n).into_owned(),
            labels: self.labels[start..start + n].to_vec(),
            classes: self.classes,
        }
    }

    /// Stack several datasets with the same feature dimension.
    pub fn concat(parts: &[&Dataset]) -> Dataset {
        let m = parts[0].feature_dim();
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut features = DMatrix::zeros(n, m);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for p in parts {
            features.rows_mut(row, p.len()).copy_from(&p.features);
            labels.extend_from_slice(&p.labels);
            row += p.len();
        }
        Dataset {
            features,
            labels,
            classes: parts.iter().map(|p| p.classes).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Idx,
}

/// A device's training data with its sensor noise applied once.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub data: Dataset,
    pub noise_var: f64,
    pub source: DataSource,
}

/// Gaussian class blobs with pixel-like means in `[0, separation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobGenerator {
    /// One row per class.
    pub means: DMatrix<f64>,
    pub spread: f64,
}

impl BlobGenerator {
    /// Within-class standard deviation of each feature.
    pub const SPREAD: f64 = 0.25;

    pub fn new<R: Rng + ?Sized>(classes: usize, dim: usize, separation: f64, rng: &mut R) -> Self {
        let means = DMatrix::from_fn(classes, dim, |_, _| separation * rng.random::<f64>());
        Self {
            means,
            spread: Self::SPREAD,
        }
    }

    pub fn classes(&self) -> usize {
        self.means.nrows()
    }

    /// Label of sample `k` out of `n`: the first `round(skew·n)` samples take
    /// the dominant class, the rest cycle through all classes.
    fn label(&self, k: usize, n: usize, skew: f64, dominant: usize) -> usize {
        let n_dom = (skew * n as f64).round() as usize;
        if k < n_dom {
            dominant
        } else {
            (dominant + (k - n_dom)) % self.classes()
        }
    }

    /// `n` clean samples. `label_skew = 0` gives balanced classes, `1` a
    /// single class.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        n: usize,
        label_skew: f64,
        dominant: usize,
        rng: &mut R,
    ) -> Dataset {
        let dim = self.means.ncols();
        let labels: Vec<usize> = (0..n)
            .map(|k| self.label(k, n, label_skew, dominant % self.classes()))
            .collect();
        let mut features = DMatrix::zeros(n, dim);
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                features[(i, j)] = self.means[(l, j)] + self.spread * z;
            }
        }
        Dataset {
            features,
            labels,
            classes: self.classes(),
        }
    }
}

/// Convenience wrapper drawing fresh class means.
pub fn make_synthetic<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    classes: usize,
    label_skew: f64,
    rng: &mut R,
) -> Dataset {
    BlobGenerator::new(classes, dim, 1.0, rng).generate(n, label_skew, 0, rng)
}

/// Add `N(0, noise_var)` to every feature. Labels are untouched.
pub fn add_sensor_noise<R: Rng + ?Sized>(
    data: Dataset,
    noise_var: f64,
    source: DataSource,
    rng: &mut R,
) -> LocalDataset {
    let mut data = data;
    if noise_var > 0.0 {
        let normal = Normal::new(0.0, noise_var.sqrt()).expect("finite variance");
        for v in data.features.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    LocalDataset {
        data,
        noise_var,
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::seeded_rng;

    #[test]
    fn balanced_without_skew() {
        let mut rng = seeded_rng(1, "t");
        let d = make_synthetic(100, 4, 2, 0.0, &mut rng);
        assert_eq!(d.class_counts(), vec![50, 50]);
    }

    #[test]
    fn full_skew_is_single_class() {
        let mut rng = seeded_rng(1, "t");
        let d = make_synthetic(37, 4, 5, 1.0, &mut rng);
        assert_eq!(d.class_counts(), vec![37, 0, 0, 0, 0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = make_synthetic(20, 3, 3, 0.3, &mut seeded_rng(9, "x"));
        let b = make_synthetic(20, 3, 3, 0.3, &mut seeded_rng(9, "x"));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_noise_leaves_features() {
        let d = make_synthetic(10, 3, 2, 0.0, &mut seeded_rng(2, "d"));
        let noisy = add_sensor_noise(d.clone(), 0.0, DataSource::Synthetic, &mut seeded_rng(2, "n"));
        assert_eq!(noisy.data, d);
    }

    #[test]
    fn noise_variance_matches() {
        let d = make_synthetic(500, 40, 2, 0.0, &mut seeded_rng(3, "d"));
        let var = 0.316_227_766;
        let noisy = add_sensor_noise(d.clone(), var, DataSource::Synthetic, &mut seeded_rng(3, "n"));
        let diff = &noisy.data.features - &d.features;
        let n = diff.len() as f64;
        let mean = diff.sum() / n;
        let emp = diff.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!((emp - var).abs() < 0.1 * var, "{emp}");
        assert_eq!(noisy.data.labels, d.labels);
    }

    #[test]
    fn concat_and_slice() {
        let d = make_synthetic(10, 3, 2, 0.0, &mut seeded_rng(4, "d"));
        let a = d.slice(0, 4);
        let b = d.slice(4, 6);
        assert_eq!(Dataset::concat(&[&a, &b]), d);
    }
}
