//! Linear probe: logistic regression on frozen latent features.

use super::train::STREAM_PROBE;
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::numerics::{Matrix, Rng};
use crate::synthdata::Batch;

/// Share of samples in the probe's training pool; the remainder after a
/// 10% validation slice is the test set.
pub const PROBE_TRAIN_POOL: f64 = 0.7;
pub const PROBE_VALID: f64 = 0.1;
pub const PROBE_ITERS: usize = 1000;
pub const PROBE_LR: f64 = 0.1;
pub const MIN_PROBE_TRAIN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains a logistic head on `z_v = E_V(x_v)` and reports test accuracy.
/// The encoder is only read.
pub fn probe(params: &ModelParams, data: &Batch, fraction: f64, seed: u64) -> Result<ProbeResult> {
    let features = params.vision_forward(&data.x_v)?;
    probe_features(&features, &data.labels, fraction, seed)
}

/// Probe on precomputed features.
pub fn probe_features(features: &Matrix, labels: &[u8], fraction: f64, seed: u64) -> Result<ProbeResult> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::BadFractions(vec![fraction]));
    }
    if features.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "probe",
            lhs: features.shape(),
            rhs: (labels.len(), 1),
        });
    }
    let n = labels.len();
    let order = Rng::new(seed).fork(STREAM_PROBE).permutation(n);
    let n_pool = (PROBE_TRAIN_POOL * n as f64).round() as usize;
    let n_valid = (PROBE_VALID * n as f64).round() as usize;
    let n_train = (fraction * n_pool as f64).round() as usize;
    if n_train < MIN_PROBE_TRAIN {
        return Err(Error::TooFewSamples {
            got: n_train,
            need: MIN_PROBE_TRAIN,
        });
    }
    let train_idx = &order[..n_train];
    let test_idx = &order[(n_pool + n_valid).min(n)..];
    if test_idx.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }

    let x_train = features.select_rows(train_idx);
    let y_train: Vec<f64> = train_idx.iter().map(|&i| labels[i] as f64).collect();
    let (mean, std) = column_stats(&x_train);
    let standardize = |x: &Matrix| {
        Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            if std[c] > 0.0 {
                (x.get(r, c) - mean[c]) / std[c]
            } else {
                0.0
            }
        })
    };
    let (w, b) = fit_logistic(&standardize(&x_train), &y_train);

    let x_test = standardize(&features.select_rows(test_idx));
    let correct = test_idx
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            let logit = b + dot(x_test.row(r), &w);
            u8::from(logit > 0.0) == labels[i]
        })
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test_idx.len() as f64,
        n_train,
        n_test: test_idx.len(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = x.col_means().into_vec();
    let n = x.rows() as f64;
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((v, &xi), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *v += (xi - m) * (xi - m) / n;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Full-batch gradient descent on the mean logistic loss, from zero weights.
fn fit_logistic(x: &Matrix, y: &[f64]) -> (Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    for _ in 0..PROBE_ITERS {
        let mut gw = vec![0.0; x.cols()];
        let mut gb = 0.0;
        for (r, &yr) in y.iter().enumerate() {
            let row = x.row(r);
            let p = 1.0 / (1.0 + (-(b + dot(row, &w))).exp());
            let err = p - yr;
            gb += err;
            for (g, &xi) in gw.iter_mut().zip(row) {
                *g += err * xi;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= PROBE_LR * g / n;
        }
        b -= PROBE_LR * gb / n;
    }
    (w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SynthConfig};

    #[test]
    fn too_few_training_samples() {
        let f = Matrix::zeros(100, 2);
        let labels = vec![0u8; 100];
        assert!(matches!(
            probe_features(&f, &labels, 0.01, 0),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(probe_features(&f, &labels, 0.0, 0).is_err());
    }

    #[test]
    fn ground_truth_factors_are_linearly_separable() {
        let d = generate(&SynthConfig {
            n_samples: 2000,
            noise_std: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let r = probe_features(&d.h, &d.labels, 1.0, 3).unwrap();
        assert!(r.accuracy > 0.95, "{r:?}");
        assert_eq!(r, probe_features(&d.h, &d.labels, 1.0, 3).unwrap());
    }
}
