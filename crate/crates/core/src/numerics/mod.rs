//! Dense linear algebra and seeded random numbers shared by every other module.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{sym_eigen, SymEigen, MAX_SWEEPS, OFF_DIAG_TOL, SYMMETRY_TOL};
pub use matrix::{col_normalize, row_normalize, Matrix};
pub use rng::{rng_normal, Rng};

/// Default floor for row/column norms before normalization.
pub const DEFAULT_EPS: f64 = 1e-12;
