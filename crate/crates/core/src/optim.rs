//! SGD with momentum and LARS (layer-wise adaptive rate scaling).
//!
//! Every weight and bias tensor is its own "layer" for LARS. For a tensor `w`
//! with gradient `g`:
//!
//! ```text
//! local_lr = base_lr · ‖w‖ / (‖g‖ + weight_decay·‖w‖ + trust_eps)   if ‖w‖ ≥ trust_eps
//!          = base_lr                                                 otherwise
//! v ← momentum·v + local_lr·(g + weight_decay·w)
//! w ← w − v
//! ```
//!
//! SGD mode uses `local_lr = base_lr`. Frozen tensors are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelParams, ParamGrads};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimMode {
    Sgd,
    #[default]
    Lars,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub mode: OptimMode,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub trust_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            mode: OptimMode::Lars,
            base_lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0,
            trust_eps: 1e-9,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && self.base_lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && self.trust_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Learning rate applied to one tensor.
    pub fn local_lr(&self, weight: &Matrix, grad: &Matrix) -> f64 {
        match self.mode {
            OptimMode::Sgd => self.base_lr,
            OptimMode::Lars => {
                let w = weight.frobenius_norm();
                if w < self.trust_eps {
                    return self.base_lr;
                }
                let g = grad.frobenius_norm();
                self.base_lr * w / (g + self.weight_decay * w + self.trust_eps)
            }
        }
    }
}

/// Momentum buffers, one per parameter tensor in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    buffers: Vec<Matrix>,
}

impl OptimState {
    pub fn new(config: OptimConfig, params: &ModelParams) -> Self {
        let buffers = params
            .tensors()
            .into_iter()
            .map(|(t, _)| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        Self { config, buffers }
    }

    pub fn buffers(&self) -> &[Matrix] {
        &self.buffers
    }
}

/// One in-place update of every trainable tensor.
pub fn step(params: &mut ModelParams, grads: &ParamGrads, state: &mut OptimState) -> Result<()> {
    let grads = grads.tensors();
    let cfg = state.config;
    {
        let tensors = params.tensors();
        if tensors.len() != grads.len() || tensors.len() != state.buffers.len() {
            return Err(Error::ShapeMismatch {
                op: "optim_step",
                lhs: (tensors.len(), 1),
                rhs: (grads.len(), 1),
            });
        }
        for (((w, _), g), b) in tensors.iter().zip(&grads).zip(&state.buffers) {
            if w.shape() != g.shape() || w.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optim_step",
                    lhs: w.shape(),
                    rhs: g.shape(),
                });
            }
        }
    }
    for (((w, trainable), g), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(state.buffers.iter_mut())
    {
        if !trainable {
            continue;
        }
        let lr = cfg.local_lr(w, g);
        let decay = cfg.weight_decay;
        for ((vi, &gi), wi) in v
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(w.as_mut_slice().iter_mut())
        {
            *vi = cfg.momentum * *vi + lr * (gi + decay * *wi);
            *wi -= *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Layer, LayerGrad, LayerSpec};

    fn one_layer_model(w: Matrix, b: Matrix, text_trainable: bool) -> ModelParams {
        let (i, o) = w.shape();
        let spec = LayerSpec {
            in_dim: i,
            out_dim: o,
            activation: Activation::None,
            trainable: true,
        };
        let vision = vec![Layer::new(spec, w, b).unwrap()];
        let proj = Layer::new(
            LayerSpec { in_dim: o, out_dim: 1, ..spec },
            Matrix::filled(o, 1, 0.5),
            Matrix::zeros(1, 1),
        )
        .unwrap();
        let text = Layer::new(
            LayerSpec { in_dim: 2, out_dim: 1, trainable: text_trainable, ..spec },
            Matrix::filled(2, 1, 0.25),
            Matrix::filled(1, 1, 0.75),
        )
        .unwrap();
        ModelParams::from_layers(vision, proj, vec![text], 1).unwrap()
    }

    fn grads_for(m: &ModelParams, vision_w: Matrix) -> ParamGrads {
        let mut g = ParamGrads::zeros_like(m);
        g.vision[0] = LayerGrad {
            weight: vision_w,
            bias: Matrix::zeros(1, m.vision[0].spec.out_dim),
        };
        g
    }

    #[test]
    fn sgd_plain_update() {
        let mut m = one_layer_model(Matrix::from_rows(&[[1.0]]), Matrix::zeros(1, 1), false);
        let g = grads_for(&m, Matrix::from_rows(&[[2.0]]));
        let cfg = OptimConfig {
            mode: OptimMode::Sgd,
            base_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut st = OptimState::new(cfg, &m);
        step(&mut m, &g, &mut st).unwrap();
        assert!((m.vision[0].weight.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay_formula() {
        let mut m = one_layer_model(Matrix::from_rows(&[[2.0]]), Matrix::zeros(1, 1), false);
        let g = grads_for(&m, Matrix::from_rows(&[[1.0]]));
        let cfg = OptimConfig {
            mode: OptimMode::Sgd,
            base_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.5,
            ..OptimConfig::default()
        };
        let mut st = OptimState::new(cfg, &m);
        step(&mut m, &g, &mut st).unwrap();
        // 2 − 0.1·(1 + 0.5·2)
        assert!((m.vision[0].weight.get(0, 0) - 1.8).abs() < 1e-15);
    }

    #[test]
    fn frozen_tensors_are_untouched() {
        let mut m = one_layer_model(Matrix::from_rows(&[[1.0]]), Matrix::zeros(1, 1), false);
        let before = m.text.clone();
        let mut g = grads_for(&m, Matrix::from_rows(&[[2.0]]));
        g.text[0].weight = Matrix::filled(2, 1, 3.0);
        let mut st = OptimState::new(OptimConfig::default(), &m);
        for _ in 0..10 {
            step(&mut m, &g, &mut st).unwrap();
        }
        assert_eq!(m.text, before);
    }

    #[test]
    fn momentum_accumulates_scaled_updates() {
        let mut m = one_layer_model(Matrix::from_rows(&[[1.0]]), Matrix::zeros(1, 1), false);
        let g = grads_for(&m, Matrix::from_rows(&[[1.0]]));
        let cfg = OptimConfig {
            mode: OptimMode::Sgd,
            base_lr: 0.1,
            momentum: 0.5,
            ..OptimConfig::default()
        };
        let mut st = OptimState::new(cfg, &m);
        step(&mut m, &g, &mut st).unwrap();
        step(&mut m, &g, &mut st).unwrap();
        // v1 = 0.1, v2 = 0.05 + 0.1
        assert!((m.vision[0].weight.get(0, 0) - (1.0 - 0.1 - 0.15)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut m = one_layer_model(Matrix::from_rows(&[[1.0]]), Matrix::zeros(1, 1), false);
        let mut g = grads_for(&m, Matrix::from_rows(&[[2.0]]));
        g.vision[0].weight = Matrix::zeros(2, 2);
        let mut st = OptimState::new(OptimConfig::default(), &m);
        assert!(matches!(step(&mut m, &g, &mut st), Err(Error::ShapeMismatch { .. })));
    }

    fn lars(trust_eps: f64) -> OptimConfig {
        OptimConfig {
            mode: OptimMode::Lars,
            base_lr: 0.05,
            momentum: 0.0,
            weight_decay: 0.0,
            trust_eps,
        }
    }

    fn updated(cfg: OptimConfig, w: Matrix, g: Matrix) -> Matrix {
        let mut m = one_layer_model(w, Matrix::filled(1, 2, 0.3), false);
        let grads = grads_for(&m, g);
        let mut st = OptimState::new(cfg, &m);
        step(&mut m, &grads, &mut st).unwrap();
        m.vision[0].weight.clone()
    }

    #[test]
    fn lars_with_unit_trust_ratio_matches_sgd() {
        // ‖w‖ = ‖g‖ = 5
        let w = Matrix::from_rows(&[[3.0, 0.0], [0.0, 4.0]]);
        let g = Matrix::from_rows(&[[0.0, -4.0], [3.0, 0.0]]);
        let sgd = OptimConfig {
            mode: OptimMode::Sgd,
            ..lars(1e-9)
        };
        let a = updated(lars(1e-300), w.clone(), g.clone());
        let b = updated(sgd, w, g);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn lars_zero_weight_falls_back_to_base_lr() {
        let g = Matrix::from_rows(&[[1.0, -2.0], [0.5, 0.0]]);
        let cfg = lars(1e-9);
        assert_eq!(cfg.local_lr(&Matrix::zeros(2, 2), &g), cfg.base_lr);
        let w = updated(cfg, Matrix::zeros(2, 2), g.clone());
        assert_eq!(w, g.scale(-cfg.base_lr));
    }

    #[test]
    fn lars_update_is_invariant_to_gradient_scale() {
        let w = Matrix::from_rows(&[[0.2, -1.0], [0.7, 0.4]]);
        let g = Matrix::from_rows(&[[0.3, 0.1], [-0.6, 2.0]]);
        let base = updated(lars(1e-300), w.clone(), g.clone());
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled = updated(lars(1e-300), w.clone(), g.scale(c));
            for (x, y) in base.as_slice().iter().zip(scaled.as_slice()) {
                assert!((x - y).abs() <= 1e-14, "c = {c}");
            }
        }
    }

    #[test]
    fn lars_is_deterministic() {
        let w = Matrix::from_rows(&[[0.2, -1.0], [0.7, 0.4]]);
        let g = Matrix::from_rows(&[[0.3, 0.1], [-0.6, 2.0]]);
        let a = updated(OptimConfig::default(), w.clone(), g.clone());
        let b = updated(OptimConfig::default(), w, g);
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let bad = OptimConfig {
            momentum: 1.0,
            ..OptimConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
