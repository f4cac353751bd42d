//! Latent-space geometry: PCA, singular spectrum, effective rank, and the
//! hypersphere alignment/uniformity metrics.
//!
//! Spectra come from the eigendecomposition of the N×N scatter matrix of the
//! mean-centered data (`σ_i = √λ_i` of `Z_cᵀZ_c`), computed with the Jacobi
//! solver in [`crate::numerics`].

use crate::error::{Error, Result};
use crate::losses::align_loss;
use crate::numerics::{col_normalize, row_normalize, sym_eigen, Matrix, DEFAULT_EPS};

/// Eigenvalues below this fraction of the largest are treated as exact zeros;
/// the Jacobi round-off floor sits a couple of orders of magnitude lower.
pub const SPECTRUM_CUTOFF: f64 = 1e-13;

/// Temperature of the uniformity metric.
pub const UNIFORMITY_T: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    /// Singular values of the centered embedding, descending.
    pub singular_values: Vec<f64>,
    pub effective_rank: f64,
    pub explained_variance_top3: f64,
    pub uniformity: f64,
    pub alignment_metric: f64,
    pub pca3: Matrix,
    /// Same spectrum metrics on the column-normalized embedding seen by the
    /// orthogonality loss.
    pub effective_rank_normalized: f64,
    pub explained_variance_top3_normalized: f64,
}

fn scatter_eigen(z: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let centered = z.center_columns();
    let scatter = centered.t_matmul(&centered)?;
    let eig = sym_eigen(&scatter)?;
    let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let values = eig
        .values
        .iter()
        .map(|&l| if l <= top * SPECTRUM_CUTOFF { 0.0 } else { l })
        .collect();
    Ok((centered, values, eig.vectors))
}

/// Singular values of the mean-centered `z`, descending.
pub fn singular_values(z: &Matrix) -> Result<Vec<f64>> {
    let (_, values, _) = scatter_eigen(z)?;
    Ok(values.into_iter().map(f64::sqrt).collect())
}

/// `exp(H(p))` with `p_i = σ_i / Σσ`.
pub fn effective_rank_from_singular_values(sigma: &[f64]) -> Result<f64> {
    let total: f64 = sigma.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let entropy: f64 = sigma
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

pub fn effective_rank(z: &Matrix) -> Result<f64> {
    effective_rank_from_singular_values(&singular_values(z)?)
}

/// Principal-component coordinates on the top three axes and the share of
/// variance they explain. Each axis is signed so that its largest-magnitude
/// loading is positive.
pub fn pca3(z: &Matrix) -> Result<(Matrix, f64)> {
    if z.rows() < 4 {
        return Err(Error::TooFewSamples {
            got: z.rows(),
            need: 4,
        });
    }
    if z.cols() < 3 {
        return Err(Error::TooFewDims {
            got: z.cols(),
            need: 3,
        });
    }
    let (centered, values, vectors) = scatter_eigen(z)?;
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let explained = (values[..3].iter().sum::<f64>() / total).clamp(0.0, 1.0);
    let mut axes = vectors.take_cols(3);
    for c in 0..3 {
        let col = axes.col(c);
        let pivot = col
            .iter()
            .copied()
            .reduce(|best, v| if v.abs() > best.abs() { v } else { best })
            .unwrap_or(0.0);
        if pivot < 0.0 {
            for r in 0..axes.rows() {
                axes.set(r, c, -axes.get(r, c));
            }
        }
    }
    Ok((centered.matmul(&axes)?, explained))
}

/// `log mean_{i<j} exp(−t‖x̂_i − x̂_j‖²)` on row-normalized embeddings.
pub fn uniformity(z: &Matrix, t: f64) -> Result<f64> {
    let b = z.rows();
    if b < 2 {
        return Err(Error::BatchTooSmall { got: b, need: 2 });
    }
    let x = row_normalize(z, DEFAULT_EPS)?;
    let mut exponents = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in (i + 1)..b {
            let d2: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            exponents.push(-t * d2);
        }
    }
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
    let value = max + (sum / exponents.len() as f64).ln();
    Ok(value.min(0.0))
}

/// Mean squared distance between normalized pairs; numerically the alignment loss.
pub fn alignment_metric(z_a: &Matrix, z_t: &Matrix) -> Result<f64> {
    align_loss(z_a, z_t, DEFAULT_EPS)
}

pub fn geometry_report(z_v: &Matrix, z_a: &Matrix, z_t: &Matrix) -> Result<GeometryReport> {
    if z_v.rows() != z_a.rows() || z_a.rows() != z_t.rows() {
        return Err(Error::ShapeMismatch {
            op: "geometry_report",
            lhs: z_v.shape(),
            rhs: z_a.shape(),
        });
    }
    let mut report = latent_report(z_v)?;
    report.alignment_metric = alignment_metric(z_a, z_t)?;
    Ok(report)
}

/// Every metric that depends on `z_v` alone; `alignment_metric` is left at 0.
pub fn latent_report(z_v: &Matrix) -> Result<GeometryReport> {
    let singular_values = singular_values(z_v)?;
    let effective_rank = effective_rank_from_singular_values(&singular_values)?;
    let (pca3, explained_variance_top3) = pca3(z_v)?;
    let uniformity = uniformity(z_v, UNIFORMITY_T)?;
    let normalized = col_normalize(z_v, DEFAULT_EPS)?;
    let effective_rank_normalized = self::effective_rank(&normalized)?;
    let (_, explained_variance_top3_normalized) = self::pca3(&normalized)?;
    Ok(GeometryReport {
        singular_values,
        effective_rank,
        explained_variance_top3,
        uniformity,
        alignment_metric: 0.0,
        pca3,
        effective_rank_normalized,
        explained_variance_top3_normalized,
    })
}
