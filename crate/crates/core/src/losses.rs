//! Alignment and orthogonality objectives with closed-form gradients.
//!
//! * alignment: `(1/B) Σ_b ‖ẑ_a[b] − ẑ_t[b]‖²`, rows ℓ2-normalized, which equals
//!   the batch mean of `2 − 2·cos(z_a[b], z_t[b])`.
//! * orthogonality: with `Z̄` the column-normalized vision embedding and
//!   `C = Z̄ᵀZ̄`, the diagonal term `Σ_i (1 − C_ii)²` and the off-diagonal term
//!   `Σ_{i≠j} C_ij²`.
//! * total: unweighted sum of the three terms.
//!
//! Gradients are taken with respect to the raw (pre-normalization)
//! embeddings and include the normalization Jacobian. The text embedding is
//! a constant unless a text gradient is explicitly requested.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{col_normalize, row_normalize, Matrix, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub align: f64,
    pub orth_diag: f64,
    pub orth_offdiag: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(align: f64, orth_diag: f64, orth_offdiag: f64) -> Self {
        Self {
            align,
            orth_diag,
            orth_offdiag,
            total: align + orth_diag + orth_offdiag,
        }
    }

    pub fn orth(&self) -> f64 {
        self.orth_diag + self.orth_offdiag
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.align.is_finite()
            && self.orth_diag.is_finite()
            && self.orth_offdiag.is_finite()
    }

    /// Component-wise mean of a non-empty slice.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown::new(sum(|l| l.align), sum(|l| l.orth_diag), sum(|l| l.orth_offdiag))
    }
}

/// Gradients of the objective with respect to the raw embeddings.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub d_za: Matrix,
    pub d_zv: Matrix,
    /// Only populated when the text tower has trainable layers.
    pub d_zt: Option<Matrix>,
}

impl LossGrads {
    pub fn zeros_like(z_a: &Matrix, z_v: &Matrix) -> Self {
        Self {
            d_za: Matrix::zeros(z_a.rows(), z_a.cols()),
            d_zv: Matrix::zeros(z_v.rows(), z_v.cols()),
            d_zt: None,
        }
    }
}

/// Which terms drive the gradient. Reported losses always contain every term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Both,
    AlignOnly,
    OrthOnly,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Both, LossMode::AlignOnly, LossMode::OrthOnly];

    pub fn uses_align(self) -> bool {
        matches!(self, LossMode::Both | LossMode::AlignOnly)
    }

    pub fn uses_orth(self) -> bool {
        matches!(self, LossMode::Both | LossMode::OrthOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Both => "both",
            LossMode::AlignOnly => "align_only",
            LossMode::OrthOnly => "orth_only",
        }
    }

    /// The value actually being minimized under this mode.
    pub fn objective(self, l: &LossBreakdown) -> f64 {
        match self {
            LossMode::Both => l.total,
            LossMode::AlignOnly => l.align,
            LossMode::OrthOnly => l.orth(),
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(LossMode::Both),
            "align_only" => Ok(LossMode::AlignOnly),
            "orth_only" => Ok(LossMode::OrthOnly),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn check_gradient_norms(norms: &[f64], eps: f64) -> Result<()> {
    match norms.iter().find(|&&n| n <= 10.0 * eps) {
        Some(&norm) => Err(Error::NearDegenerateNorm { norm }),
        None => Ok(()),
    }
}

pub fn align_loss(z_a: &Matrix, z_t: &Matrix, eps: f64) -> Result<f64> {
    check_same_shape(z_a, z_t, "align_loss")?;
    let a = row_normalize(z_a, eps)?;
    let t = row_normalize(z_t, eps)?;
    Ok(mean_squared_row_distance(&a, &t))
}

fn mean_squared_row_distance(a: &Matrix, t: &Matrix) -> f64 {
    let b = a.rows().max(1) as f64;
    a.as_slice()
        .iter()
        .zip(t.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / b
}

/// Orthogonality terms `(diag, offdiag)` of the column-normalized vision embedding.
pub fn orth_loss(z_v: &Matrix, eps: f64) -> Result<(f64, f64)> {
    orth_loss_with(z_v, eps, false)
}

/// As [`orth_loss`]; with `center_features` the columns are mean-centered
/// before normalization, turning the gram matrix into a correlation matrix.
pub fn orth_loss_with(z_v: &Matrix, eps: f64, center_features: bool) -> Result<(f64, f64)> {
    let (_, gram) = normalized_gram(z_v, eps, center_features)?;
    Ok(gram_penalties(&gram))
}

fn normalized_gram(z_v: &Matrix, eps: f64, center: bool) -> Result<(Matrix, Matrix)> {
    if z_v.rows() < 2 {
        return Err(Error::BatchTooSmall {
            got: z_v.rows(),
            need: 2,
        });
    }
    let z = if center {
        col_normalize(&z_v.center_columns(), eps)?
    } else {
        col_normalize(z_v, eps)?
    };
    let gram = z.t_matmul(&z)?;
    Ok((z, gram))
}

fn gram_penalties(gram: &Matrix) -> (f64, f64) {
    let n = gram.rows();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = gram.get(i, j);
            if i == j {
                diag += (1.0 - c) * (1.0 - c);
            } else {
                off += c * c;
            }
        }
    }
    (diag, off)
}

pub fn total_loss(z_a: &Matrix, z_t: &Matrix, z_v: &Matrix, eps: f64) -> Result<LossBreakdown> {
    let align = align_loss(z_a, z_t, eps)?;
    let (diag, off) = orth_loss(z_v, eps)?;
    Ok(LossBreakdown::new(align, diag, off))
}

/// Alignment loss with gradients for `z_a` and, optionally, `z_t`.
pub fn align_loss_grad(
    z_a: &Matrix,
    z_t: &Matrix,
    eps: f64,
    with_text_grad: bool,
) -> Result<(f64, Matrix, Option<Matrix>)> {
    check_same_shape(z_a, z_t, "align_loss_grad")?;
    let a_hat = row_normalize(z_a, eps)?;
    let t_hat = row_normalize(z_t, eps)?;
    let a_norms = z_a.row_norms();
    check_gradient_norms(&a_norms, eps)?;
    let t_norms = z_t.row_norms();
    if with_text_grad {
        check_gradient_norms(&t_norms, eps)?;
    }
    let loss = mean_squared_row_distance(&a_hat, &t_hat);

    // dL/dâ_b = (2/B)(â_b − t̂_b); pushing it through (I − â âᵀ)/‖a‖ leaves
    // (2/B)/‖a‖ · (â (âᵀt̂) − t̂).
    let scale = 2.0 / z_a.rows() as f64;
    let project = |own: &Matrix, other: &Matrix, norms: &[f64]| {
        let mut g = Matrix::zeros(own.rows(), own.cols());
        for r in 0..own.rows() {
            let u = own.row(r);
            let w = other.row(r);
            let cos: f64 = u.iter().zip(w).map(|(x, y)| x * y).sum();
            let k = scale / norms[r];
            for ((o, &ui), &wi) in g.row_mut(r).iter_mut().zip(u).zip(w) {
                *o = k * (ui * cos - wi);
            }
        }
        g
    };
    let d_za = project(&a_hat, &t_hat, &a_norms);
    let d_zt = with_text_grad.then(|| project(&t_hat, &a_hat, &t_norms));
    Ok((loss, d_za, d_zt))
}

/// Orthogonality terms with the gradient for raw `z_v`.
pub fn orth_loss_grad(z_v: &Matrix, eps: f64, center_features: bool) -> Result<((f64, f64), Matrix)> {
    let (z_bar, gram) = normalized_gram(z_v, eps, center_features)?;
    let source = if center_features {
        z_v.center_columns()
    } else {
        z_v.clone()
    };
    let norms = source.col_norms();
    check_gradient_norms(&norms, eps)?;
    let terms = gram_penalties(&gram);

    // L = ‖C − I‖²_F, C = Z̄ᵀZ̄  ⇒  dL/dZ̄ = 4 Z̄ (C − I).
    let mut residual = gram;
    for i in 0..residual.rows() {
        residual.set(i, i, residual.get(i, i) - 1.0);
    }
    let d_bar = z_bar.matmul(&residual)?.scale(4.0);

    // Column-normalization Jacobian: (g − z̄ (z̄ᵀg)) / ‖z‖ per column.
    let n = z_v.cols();
    let mut radial = vec![0.0; n];
    for r in 0..z_bar.rows() {
        for (acc, (&zb, &g)) in radial.iter_mut().zip(z_bar.row(r).iter().zip(d_bar.row(r))) {
            *acc += zb * g;
        }
    }
    let mut d_zv = Matrix::zeros(z_v.rows(), n);
    for r in 0..z_v.rows() {
        let zb = z_bar.row(r);
        let g = d_bar.row(r);
        for (c, o) in d_zv.row_mut(r).iter_mut().enumerate() {
            *o = (g[c] - zb[c] * radial[c]) / norms[c];
        }
    }
    if center_features {
        d_zv = d_zv.center_columns();
    }
    Ok((terms, d_zv))
}

/// Full objective with analytic gradients for `z_a` and `z_v`. No gradient
/// flows to the frozen text embedding.
pub fn total_loss_grad(
    z_a: &Matrix,
    z_t: &Matrix,
    z_v: &Matrix,
    eps: f64,
) -> Result<(LossBreakdown, LossGrads)> {
    Objective {
        eps,
        ..Objective::default()
    }
    .evaluate(z_a, z_t, z_v)
}

/// Loss configuration used by the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub eps: f64,
    pub mode: LossMode,
    pub center_features: bool,
    /// Also differentiate with respect to `z_t` (unfrozen text layers).
    pub text_grad: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            mode: LossMode::Both,
            center_features: false,
            text_grad: false,
        }
    }
}

impl Objective {
    /// Reports every loss term; gradients include only the terms enabled by `mode`.
    pub fn evaluate(
        &self,
        z_a: &Matrix,
        z_t: &Matrix,
        z_v: &Matrix,
    ) -> Result<(LossBreakdown, LossGrads)> {
        if z_a.rows() != z_v.rows() {
            return Err(Error::ShapeMismatch {
                op: "objective",
                lhs: z_a.shape(),
                rhs: z_v.shape(),
            });
        }
        let (align, d_za, d_zt) = align_loss_grad(z_a, z_t, self.eps, self.text_grad)?;
        let ((diag, off), d_zv) = orth_loss_grad(z_v, self.eps, self.center_features)?;
        let losses = LossBreakdown::new(align, diag, off);

        let mut grads = LossGrads::zeros_like(z_a, z_v);
        if self.mode.uses_align() {
            grads.d_za = d_za;
            grads.d_zt = d_zt;
        } else if self.text_grad {
            grads.d_zt = Some(Matrix::zeros(z_t.rows(), z_t.cols()));
        }
        if self.mode.uses_orth() {
            grads.d_zv = d_zv;
        }
        Ok((losses, grads))
    }

    pub fn loss(&self, z_a: &Matrix, z_t: &Matrix, z_v: &Matrix) -> Result<LossBreakdown> {
        let align = align_loss(z_a, z_t, self.eps)?;
        let (diag, off) = orth_loss_with(z_v, self.eps, self.center_features)?;
        Ok(LossBreakdown::new(align, diag, off))
    }
}
