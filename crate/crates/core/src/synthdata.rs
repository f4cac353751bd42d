//! Synthetic paired "image/report" data with known latent factors.
//!
//! For each sample a factor row `h ~ N(0, I_k)` is drawn and both views are
//! derived from it:
//!
//! ```text
//! x_v = tanh(A·h) + noise_std·ε      A: vision_dim × k, entries N(0, 1/k)
//! x_t = C·h       + noise_std·ε'     C: text_dim   × k, entries N(0, 1/k)
//! label = 1 iff h[0] > 0
//! ```
//!
//! Draw order from the seeded generator: A, C, then H, ε, ε'.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub latent_dim: usize,
    pub vision_dim: usize,
    pub text_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            latent_dim: 8,
            vision_dim: 32,
            text_dim: 32,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.latent_dim == 0 || self.vision_dim == 0 || self.text_dim == 0 {
            return Err(Error::Config("synthetic dimensions must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("bad noise_std {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Paired samples. The full dataset is itself a `Batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x_v: Matrix,
    pub x_t: Matrix,
    /// Ground-truth factors, for evaluation only.
    pub h: Matrix,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn new(x_v: Matrix, x_t: Matrix, h: Matrix, labels: Vec<u8>) -> Result<Self> {
        let n = x_v.rows();
        if x_t.rows() != n || h.rows() != n || labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "batch",
                lhs: x_v.shape(),
                rhs: x_t.shape(),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Config("labels must be 0 or 1".into()));
        }
        Ok(Self { x_v, x_t, h, labels })
    }

    pub fn len(&self) -> usize {
        self.x_v.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            x_v: self.x_v.select_rows(indices),
            x_t: self.x_t.select_rows(indices),
            h: self.h.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Generates a dataset with freshly drawn mixing matrices.
pub fn generate(config: &SynthConfig) -> Result<Batch> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let scale = 1.0 / (config.latent_dim as f64).sqrt();
    let a = rng.normal_matrix(config.vision_dim, config.latent_dim).scale(scale);
    let c = rng.normal_matrix(config.text_dim, config.latent_dim).scale(scale);
    generate_from(config, &a, &c, &mut rng)
}

/// Generates a dataset with caller-provided mixing matrices
/// (`a: vision_dim × k`, `c: text_dim × k`).
pub fn generate_with_mixing(config: &SynthConfig, a: &Matrix, c: &Matrix) -> Result<Batch> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    generate_from(config, a, c, &mut rng)
}

fn generate_from(config: &SynthConfig, a: &Matrix, c: &Matrix, rng: &mut Rng) -> Result<Batch> {
    let k = config.latent_dim;
    if a.shape() != (config.vision_dim, k) || c.shape() != (config.text_dim, k) {
        return Err(Error::ShapeMismatch {
            op: "generate",
            lhs: a.shape(),
            rhs: c.shape(),
        });
    }
    let n = config.n_samples;
    let h = rng.normal_matrix(n, k);
    let noise_v = rng.normal_matrix(n, config.vision_dim);
    let noise_t = rng.normal_matrix(n, config.text_dim);
    let x_v = h
        .matmul_t(a)?
        .map(f64::tanh)
        .zip_map(&noise_v, "generate", |x, e| x + config.noise_std * e)?;
    let x_t = h
        .matmul_t(c)?
        .zip_map(&noise_t, "generate", |x, e| x + config.noise_std * e)?;
    let labels = (0..n).map(|r| u8::from(h.get(r, 0) > 0.0)).collect();
    Batch::new(x_v, x_t, h, labels)
}

/// Seeded shuffle followed by a contiguous split into
/// `(train, valid, test)`; sizes are `round(f·n)` and test takes the rest.
pub fn split(data: &Batch, fractions: (f64, f64), seed: u64) -> Result<(Batch, Batch, Batch)> {
    let (ft, fv) = fractions;
    let valid = |f: f64| f.is_finite() && (0.0..=1.0).contains(&f);
    if !valid(ft) || !valid(fv) || ft + fv > 1.0 + 1e-12 {
        return Err(Error::BadFractions(vec![ft, fv]));
    }
    let n = data.len();
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_valid = ((fv * n as f64).round() as usize).min(n - n_train);
    let order = Rng::new(seed).permutation(n);
    let (train, rest) = order.split_at(n_train);
    let (valid, test) = rest.split_at(n_valid);
    Ok((data.select(train), data.select(valid), data.select(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_mixing_without_noise_gives_tanh_of_factors() {
        let cfg = SynthConfig {
            n_samples: 20,
            latent_dim: 4,
            vision_dim: 4,
            text_dim: 4,
            noise_std: 0.0,
            seed: 1,
        };
        let d = generate_with_mixing(&cfg, &Matrix::identity(4), &Matrix::identity(4)).unwrap();
        assert_eq!(d.x_v, d.h.map(f64::tanh));
        assert_eq!(d.x_t, d.h);
    }

    #[test]
    fn generation_is_deterministic_and_paired() {
        let cfg = SynthConfig {
            n_samples: 100,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_ne!(a, generate(&SynthConfig { seed: 1, ..cfg }).unwrap());
        for r in 0..100 {
            assert_eq!(a.labels[r] == 1, a.h.get(r, 0) > 0.0);
        }
    }

    #[test]
    fn labels_are_balanced() {
        let d = generate(&SynthConfig {
            n_samples: 10_000,
            ..SynthConfig::default()
        })
        .unwrap();
        let frac = d.labels.iter().map(|&l| l as f64).sum::<f64>() / 1e4;
        assert!((0.49..=0.51).contains(&frac), "{frac}");
    }

    #[test]
    fn split_sizes() {
        let d = generate(&SynthConfig {
            n_samples: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        let (tr, va, te) = split(&d, (0.8, 0.1), 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        let (tr2, _, _) = split(&d, (0.8, 0.1), 3).unwrap();
        assert_eq!(tr, tr2);

        let big = generate(&SynthConfig {
            n_samples: 1000,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(split(&big, (0.01, 0.0), 0).unwrap().0.len(), 10);
    }

    #[test]
    fn bad_fractions() {
        let d = generate(&SynthConfig {
            n_samples: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(matches!(split(&d, (0.8, 0.3), 0), Err(Error::BadFractions(_))));
        assert!(matches!(split(&d, (-0.1, 0.3), 0), Err(Error::BadFractions(_))));
        assert!(matches!(split(&d, (f64::NAN, 0.0), 0), Err(Error::BadFractions(_))));
    }
}
