//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Each sweep visits every off-diagonal pair `(p, q)` once in row order and
//! zeroes it with a Givens rotation. Iteration stops when the off-diagonal
//! Frobenius norm drops to `OFF_DIAG_TOL · max(1, ‖S‖_F)` or after
//! `MAX_SWEEPS` sweeps.

use super::Matrix;
use crate::error::{Error, Result};

pub const OFF_DIAG_TOL: f64 = 1e-11;
pub const MAX_SWEEPS: usize = 100;
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenvalues in descending order; `vectors` holds the matching unit
/// eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

pub fn sym_eigen(s: &Matrix) -> Result<SymEigen> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "sym_eigen",
            lhs: s.shape(),
            rhs: (n, n),
        });
    }
    let scale = s.max_abs().max(1.0);
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((s.get(i, j) - s.get(j, i)).abs());
        }
    }
    if max_asym > SYMMETRY_TOL * scale || !s.is_finite() {
        return Err(Error::NotSymmetric { max_asym });
    }

    // Work on the exactly symmetrized copy.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (s.get(i, j) + s.get(j, i));
        }
    }
    let mut v = Matrix::identity(n).into_vec();
    let tol = OFF_DIAG_TOL * s.frobenius_norm().max(1.0);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a, n) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&a, n);
        if off > tol {
            return Err(Error::NoConvergence {
                sweeps: MAX_SWEEPS,
                off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(SymEigen { values, vectors })
}
