//! Central finite-difference check of the analytic gradients.

use std::fmt;

use crate::error::Result;
use crate::losses::Objective;
use crate::models::{backward, forward, init_model, Activation, FreezePolicy, ModelConfig, ModelParams};
use crate::numerics::{Matrix, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Error of an analytic gradient against its finite-difference estimate:
/// `max_i |a_i − f_i| / max(max_i |a_i|, max_i |f_i|, floor)`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    const FLOOR: f64 = 1e-8;
    let diff = analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, f)| (a - f).abs())
        .fold(0.0, f64::max);
    diff / analytic.max_abs().max(numeric.max_abs()).max(FLOOR)
}

/// Central differences of `f` around `x`, one entry at a time.
pub fn numeric_gradient(x: &Matrix, step: f64, mut f: impl FnMut(&Matrix) -> Result<f64>) -> Result<Matrix> {
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let plus = f(&probe)?;
        probe.as_mut_slice()[i] = orig - step;
        let minus = f(&probe)?;
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub lines: Vec<GradcheckLine>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(GradcheckLine::passed)
    }

    pub fn max_error(&self, prefix: &str) -> f64 {
        self.lines
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .map(|l| l.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(
                f,
                "{:<28} max_rel_err {:.3e}  tol {:.0e}  {}",
                l.name,
                l.max_rel_error,
                l.tolerance,
                if l.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub batch: usize,
    /// Width of `z_a` and `z_t`.
    pub embed_dim: usize,
    /// Width of `z_v`.
    pub latent_dim: usize,
    /// Perturbs one analytic entry so the check must fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 8,
            embed_dim: 16,
            latent_dim: 16,
            corrupt: false,
        }
    }
}

/// Small two-tower model with every text layer trainable and token pooling.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        vision_dims: vec![6, 10, 8],
        projector_dim: 5,
        text_dims: vec![4, 7, 5],
        text_tokens: 3,
        hidden_activation: Activation::Tanh,
        latent_activation: Activation::Tanh,
    }
}

fn full_objective() -> Objective {
    Objective {
        text_grad: true,
        ..Objective::default()
    }
}

/// Checks the loss gradients with respect to `z_a`, `z_t` and `z_v`.
pub fn check_loss_gradients(z_a: &Matrix, z_t: &Matrix, z_v: &Matrix, corrupt: bool) -> Result<GradcheckReport> {
    let obj = full_objective();
    let (_, mut grads) = obj.evaluate(z_a, z_t, z_v)?;
    if corrupt {
        grads.d_za.as_mut_slice()[0] += 1e-3 * (1.0 + grads.d_za.max_abs());
    }
    let d_zt = grads.d_zt.expect("text gradient requested");
    let total = |a: &Matrix, t: &Matrix, v: &Matrix| obj.loss(a, t, v).map(|l| l.total);
    let num_za = numeric_gradient(z_a, FD_STEP, |a| total(a, z_t, z_v))?;
    let num_zt = numeric_gradient(z_t, FD_STEP, |t| total(z_a, t, z_v))?;
    let num_zv = numeric_gradient(z_v, FD_STEP, |v| total(z_a, z_t, v))?;
    let line = |name: &str, a: &Matrix, f: &Matrix| GradcheckLine {
        name: name.to_string(),
        max_rel_error: relative_error(a, f),
        tolerance: LOSS_TOLERANCE,
    };
    Ok(GradcheckReport {
        lines: vec![
            line("loss/d_za", &grads.d_za, &num_za),
            line("loss/d_zt", &d_zt, &num_zt),
            line("loss/d_zv", &grads.d_zv, &num_zv),
        ],
    })
}

/// Checks `backward` for every trainable parameter tensor of `params`.
pub fn check_model_gradients(
    params: &ModelParams,
    x_v: &Matrix,
    x_t: &Matrix,
    corrupt: bool,
) -> Result<GradcheckReport> {
    let obj = Objective {
        text_grad: params.text_trainable(),
        ..Objective::default()
    };
    let out = forward(params, x_v, x_t)?;
    let (_, loss_grads) = obj.evaluate(&out.z_a, &out.z_t, &out.z_v)?;
    let mut grads = backward(params, &out.cache, &loss_grads)?;
    if corrupt {
        let w = &mut grads.vision[0].weight;
        w.as_mut_slice()[0] += 1e-3 * (1.0 + w.max_abs());
    }
    let names = params.tensor_names();
    let analytic = grads.tensors();
    let mut lines = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let (original, trainable) = params.tensors()[k];
        if !trainable {
            continue;
        }
        let original = original.clone();
        let numeric = numeric_gradient(&original, FD_STEP, |t| {
            let mut p = params.clone();
            *p.tensors_mut()[k].0 = t.clone();
            let o = forward(&p, x_v, x_t)?;
            obj.loss(&o.z_a, &o.z_t, &o.z_v).map(|l| l.total)
        })?;
        lines.push(GradcheckLine {
            name: format!("model/{name}"),
            max_rel_error: relative_error(analytic[k], &numeric),
            tolerance: MODEL_TOLERANCE,
        });
    }
    Ok(GradcheckReport { lines })
}

/// Random loss instance and a random small model, both checked.
pub fn gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = Rng::new(config.seed);
    let z_a = rng.normal_matrix(config.batch, config.embed_dim);
    let z_t = rng.normal_matrix(config.batch, config.embed_dim);
    let z_v = rng.normal_matrix(config.batch, config.latent_dim);
    let mut report = check_loss_gradients(&z_a, &z_t, &z_v, config.corrupt)?;

    let model_cfg = gradcheck_model_config();
    let mut params = init_model(&model_cfg, &mut rng)?;
    params.apply_freeze_policy(FreezePolicy::unfreeze_last(model_cfg.text_layer_count()));
    // Nonzero biases so their gradients are exercised away from the origin.
    for (t, _) in params.tensors_mut() {
        if t.rows() == 1 {
            *t = rng.normal_matrix(1, t.cols()).scale(0.1);
        }
    }
    let x_v = rng.normal_matrix(config.batch, model_cfg.vision_input_dim());
    let x_t = rng.normal_matrix(config.batch, model_cfg.text_input_dim());
    report
        .lines
        .extend(check_model_gradients(&params, &x_v, &x_t, config.corrupt)?.lines);
    Ok(report)
}
