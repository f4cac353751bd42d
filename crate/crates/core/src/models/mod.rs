//! Two-tower model: trainable MLP vision encoder, linear projector, and a
//! layered text encoder that is frozen by default.
//!
//! The text tower reads each report row as `text_tokens` equal-width token
//! vectors. Body layers run token-wise with shared weights, token states are
//! mean-pooled, and the final linear head maps the pooled state to the text
//! embedding. The head counts as the last text layer for freezing purposes.

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossGrads;
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::None => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub trainable: bool,
}

/// Affine layer `y = act(x·W + b)` with `W: in × out` and `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Layer {
    pub fn new(spec: LayerSpec, weight: Matrix, bias: Matrix) -> Result<Self> {
        if weight.shape() != (spec.in_dim, spec.out_dim) || bias.shape() != (1, spec.out_dim) {
            return Err(Error::BadDimChain(format!(
                "layer {}→{} given weight {:?} and bias {:?}",
                spec.in_dim,
                spec.out_dim,
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { spec, weight, bias })
    }

    fn init(spec: LayerSpec, rng: &mut Rng) -> Self {
        let std = 1.0 / (spec.in_dim as f64).sqrt();
        let weight = rng.normal_matrix(spec.in_dim, spec.out_dim).scale(std);
        Self {
            spec,
            weight,
            bias: Matrix::zeros(1, spec.out_dim),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.spec.activation;
        Ok(x.matmul(&self.weight)?
            .add_row_broadcast(&self.bias)?
            .map(|v| act.apply(v)))
    }

    /// Returns `(grad, d_input)` given the layer input, output and upstream gradient.
    fn backward(&self, input: &Matrix, output: &Matrix, d_out: &Matrix, need_input_grad: bool) -> Result<(LayerGrad, Option<Matrix>)> {
        let act = self.spec.activation;
        let d_pre = d_out.zip_map(output, "layer_backward", |g, y| {
            g * act.derivative_from_output(y)
        })?;
        let grad = LayerGrad {
            weight: input.t_matmul(&d_pre)?,
            bias: d_pre.col_sums(),
        };
        let d_in = if need_input_grad {
            Some(d_pre.matmul_t(&self.weight)?)
        } else {
            None
        };
        Ok((grad, d_in))
    }
}

/// Architecture of the two towers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Vision MLP widths, input first; the last entry is the latent width N.
    pub vision_dims: Vec<usize>,
    /// Projector output width; must equal the text embedding width M.
    pub projector_dim: usize,
    /// Text widths: token width, hidden body widths, embedding width M.
    pub text_dims: Vec<usize>,
    pub text_tokens: usize,
    pub hidden_activation: Activation,
    /// Activation of the last vision layer, i.e. of `z_v` itself.
    pub latent_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vision_dims: vec![32, 64, 16],
            projector_dim: 8,
            text_dims: vec![32, 16, 8],
            text_tokens: 1,
            hidden_activation: Activation::Tanh,
            latent_activation: Activation::None,
        }
    }
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        *self.vision_dims.last().unwrap_or(&0)
    }

    pub fn vision_input_dim(&self) -> usize {
        self.vision_dims.first().copied().unwrap_or(0)
    }

    pub fn text_input_dim(&self) -> usize {
        self.text_dims.first().copied().unwrap_or(0) * self.text_tokens
    }

    pub fn text_layer_count(&self) -> usize {
        self.text_dims.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vision_dims.len() < 2 {
            return Err(Error::BadDimChain("vision tower needs at least one layer".into()));
        }
        if self.text_dims.len() < 2 {
            return Err(Error::BadDimChain("text tower needs at least one layer".into()));
        }
        if self.vision_dims.iter().chain(&self.text_dims).any(|&d| d == 0) || self.projector_dim == 0 {
            return Err(Error::BadDimChain("zero-width layer".into()));
        }
        if self.text_tokens == 0 {
            return Err(Error::BadDimChain("text_tokens must be positive".into()));
        }
        let text_out = *self.text_dims.last().unwrap();
        if self.projector_dim != text_out {
            return Err(Error::BadDimChain(format!(
                "projector output {} differs from text embedding width {}",
                self.projector_dim, text_out
            )));
        }
        Ok(())
    }
}

/// How many text layers, counted from the output end, are trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FreezePolicy {
    pub unfreeze_last_n: usize,
}

impl FreezePolicy {
    pub fn frozen() -> Self {
        Self::default()
    }

    pub fn unfreeze_last(n: usize) -> Self {
        Self { unfreeze_last_n: n }
    }

    pub fn is_trainable(&self, text_layer: usize, text_layers: usize) -> bool {
        text_layer + self.unfreeze_last_n.min(text_layers) >= text_layers
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub vision: Vec<Layer>,
    pub projector: Layer,
    /// Body layers followed by the pooled head (last element).
    pub text: Vec<Layer>,
    pub text_tokens: usize,
    version: u64,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.vision == other.vision
            && self.projector == other.projector
            && self.text == other.text
            && self.text_tokens == other.text_tokens
    }
}

impl ModelParams {
    pub fn from_layers(vision: Vec<Layer>, projector: Layer, text: Vec<Layer>, text_tokens: usize) -> Result<Self> {
        let p = Self {
            vision,
            projector,
            text,
            text_tokens,
            version: 0,
        };
        p.check_chain()?;
        Ok(p)
    }

    fn check_chain(&self) -> Result<()> {
        if self.vision.is_empty() || self.text.is_empty() || self.text_tokens == 0 {
            return Err(Error::BadDimChain("empty tower".into()));
        }
        let chain_ok = |layers: &[Layer]| layers.windows(2).all(|w| w[0].spec.out_dim == w[1].spec.in_dim);
        if !chain_ok(&self.vision) || !chain_ok(&self.text) {
            return Err(Error::BadDimChain("consecutive layer widths do not chain".into()));
        }
        if self.projector.spec.in_dim != self.latent_dim() {
            return Err(Error::BadDimChain("projector input differs from latent width".into()));
        }
        if self.projector.spec.out_dim != self.text.last().unwrap().spec.out_dim {
            return Err(Error::BadDimChain("projector output differs from text embedding width".into()));
        }
        for l in self.vision.iter().chain([&self.projector]).chain(&self.text) {
            if l.weight.shape() != (l.spec.in_dim, l.spec.out_dim) || l.bias.shape() != (1, l.spec.out_dim) {
                return Err(Error::BadDimChain("parameter shape disagrees with layer spec".into()));
            }
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.vision.last().map_or(0, |l| l.spec.out_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.projector.spec.out_dim
    }

    pub fn vision_input_dim(&self) -> usize {
        self.vision[0].spec.in_dim
    }

    pub fn text_input_dim(&self) -> usize {
        self.text[0].spec.in_dim * self.text_tokens
    }

    /// Mutation counter; bumped by every mutable access to the tensors.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn apply_freeze_policy(&mut self, policy: FreezePolicy) {
        let n = self.text.len();
        for (i, layer) in self.text.iter_mut().enumerate() {
            layer.spec.trainable = policy.is_trainable(i, n);
        }
    }

    pub fn text_trainable(&self) -> bool {
        self.text.iter().any(|l| l.spec.trainable)
    }

    /// All layers in canonical order: vision, projector, text.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.vision.iter().chain(std::iter::once(&self.projector)).chain(self.text.iter())
    }

    /// Canonical tensor names, two per layer (weight, bias).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.vision.len() {
            names.push(format!("vision.{i}.weight"));
            names.push(format!("vision.{i}.bias"));
        }
        names.push("projector.weight".into());
        names.push("projector.bias".into());
        for i in 0..self.text.len() {
            names.push(format!("text.{i}.weight"));
            names.push(format!("text.{i}.bias"));
        }
        names
    }

    /// `(tensor, trainable)` pairs in canonical order.
    pub fn tensors(&self) -> Vec<(&Matrix, bool)> {
        self.layers()
            .flat_map(|l| [(&l.weight, l.spec.trainable), (&l.bias, l.spec.trainable)])
            .collect()
    }

    /// Mutable `(tensor, trainable)` pairs in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<(&mut Matrix, bool)> {
        self.version += 1;
        self.vision
            .iter_mut()
            .chain(std::iter::once(&mut self.projector))
            .chain(self.text.iter_mut())
            .flat_map(|l| {
                let t = l.spec.trainable;
                [(&mut l.weight, t), (&mut l.bias, t)]
            })
            .collect()
    }

    pub fn vision_forward(&self, x_v: &Matrix) -> Result<Matrix> {
        let mut h = x_v.clone();
        for layer in &self.vision {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn text_forward(&self, x_t: &Matrix) -> Result<Matrix> {
        Ok(self.text_forward_cached(x_t)?.0)
    }

    fn text_forward_cached(&self, x_t: &Matrix) -> Result<(Matrix, Vec<Matrix>, Matrix)> {
        if x_t.cols() != self.text_input_dim() {
            return Err(Error::ShapeMismatch {
                op: "text_forward",
                lhs: x_t.shape(),
                rhs: (x_t.rows(), self.text_input_dim()),
            });
        }
        let tokens = self.text_tokens;
        let token_dim = self.text[0].spec.in_dim;
        let (body, head) = self.text.split_at(self.text.len() - 1);
        let mut acts = vec![x_t.reshape(x_t.rows() * tokens, token_dim)?];
        for layer in body {
            let next = layer.forward(acts.last().unwrap())?;
            acts.push(next);
        }
        let pooled = mean_pool(acts.last().unwrap(), tokens);
        let z_t = head[0].forward(&pooled)?;
        Ok((z_t, acts, pooled))
    }
}

fn mean_pool(token_rows: &Matrix, tokens: usize) -> Matrix {
    let b = token_rows.rows() / tokens;
    let d = token_rows.cols();
    let mut out = Matrix::zeros(b, d);
    for r in 0..b {
        for t in 0..tokens {
            let src = token_rows.row(r * tokens + t);
            for (o, &v) in out.row_mut(r).iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    out.scale(1.0 / tokens as f64)
}

fn mean_unpool(d_pooled: &Matrix, tokens: usize) -> Matrix {
    let scale = 1.0 / tokens as f64;
    Matrix::from_fn(d_pooled.rows() * tokens, d_pooled.cols(), |r, c| {
        d_pooled.get(r / tokens, c) * scale
    })
}

/// Builds a model with scaled-normal weights (std `1/√in_dim`) and zero
/// biases. The text tower starts frozen.
pub fn init_model(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let n_vision = config.vision_dims.len() - 1;
    let vision = config
        .vision_dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let activation = if i + 1 == n_vision {
                config.latent_activation
            } else {
                config.hidden_activation
            };
            Layer::init(
                LayerSpec {
                    in_dim: w[0],
                    out_dim: w[1],
                    activation,
                    trainable: true,
                },
                rng,
            )
        })
        .collect();
    let projector = Layer::init(
        LayerSpec {
            in_dim: config.latent_dim(),
            out_dim: config.projector_dim,
            activation: Activation::None,
            trainable: true,
        },
        rng,
    );
    let n_text = config.text_layer_count();
    let text = config
        .text_dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let activation = if i + 1 == n_text {
                Activation::None
            } else {
                config.hidden_activation
            };
            Layer::init(
                LayerSpec {
                    in_dim: w[0],
                    out_dim: w[1],
                    activation,
                    trainable: false,
                },
                rng,
            )
        })
        .collect();
    ModelParams::from_layers(vision, projector, text, config.text_tokens)
}

/// Intermediates recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Vision activations: input, then each layer's output.
    vision_acts: Vec<Matrix>,
    /// Text token activations: token rows of the input, then each body layer's output.
    text_acts: Vec<Matrix>,
    pooled: Matrix,
    z_t: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub z_v: Matrix,
    pub z_a: Matrix,
    pub z_t: Matrix,
    pub cache: ForwardCache,
}

pub fn forward(params: &ModelParams, x_v: &Matrix, x_t: &Matrix) -> Result<ForwardOutput> {
    if x_v.cols() != params.vision_input_dim() || x_v.rows() != x_t.rows() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: x_v.shape(),
            rhs: x_t.shape(),
        });
    }
    let mut vision_acts = vec![x_v.clone()];
    for layer in &params.vision {
        let next = layer.forward(vision_acts.last().unwrap())?;
        vision_acts.push(next);
    }
    let z_v = vision_acts.last().unwrap().clone();
    let z_a = params.projector.forward(&z_v)?;
    let (z_t, text_acts, pooled) = params.text_forward_cached(x_t)?;
    Ok(ForwardOutput {
        z_v,
        z_a,
        z_t: z_t.clone(),
        cache: ForwardCache {
            version: params.version,
            vision_acts,
            text_acts,
            pooled,
            z_t,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl LayerGrad {
    fn zeros(layer: &Layer) -> Self {
        Self {
            weight: Matrix::zeros(layer.spec.in_dim, layer.spec.out_dim),
            bias: Matrix::zeros(1, layer.spec.out_dim),
        }
    }
}

/// Gradients mirroring [`ModelParams`]; frozen tensors carry exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub vision: Vec<LayerGrad>,
    pub projector: LayerGrad,
    pub text: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            vision: params.vision.iter().map(LayerGrad::zeros).collect(),
            projector: LayerGrad::zeros(&params.projector),
            text: params.text.iter().map(LayerGrad::zeros).collect(),
        }
    }

    /// Tensors in the canonical order of [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.vision
            .iter()
            .chain(std::iter::once(&self.projector))
            .chain(self.text.iter())
            .flat_map(|g| [&g.weight, &g.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.vision
            .iter_mut()
            .chain(std::iter::once(&mut self.projector))
            .chain(self.text.iter_mut())
            .flat_map(|g| [&mut g.weight, &mut g.bias])
            .collect()
    }
}

pub fn backward(params: &ModelParams, cache: &ForwardCache, loss_grads: &LossGrads) -> Result<ParamGrads> {
    if cache.version != params.version
        || cache.vision_acts.len() != params.vision.len() + 1
        || cache.text_acts.len() != params.text.len()
    {
        return Err(Error::StaleCache);
    }
    let z_v = cache.vision_acts.last().unwrap();
    if loss_grads.d_zv.shape() != z_v.shape() || loss_grads.d_za.shape() != (z_v.rows(), params.embed_dim()) {
        return Err(Error::ShapeMismatch {
            op: "backward",
            lhs: loss_grads.d_zv.shape(),
            rhs: z_v.shape(),
        });
    }
    let mut grads = ParamGrads::zeros_like(params);

    // The projector is linear, so its backward pass needs no activation output.
    let d_za = &loss_grads.d_za;
    grads.projector = LayerGrad {
        weight: z_v.t_matmul(d_za)?,
        bias: d_za.col_sums(),
    };
    let mut d_out = loss_grads.d_zv.add(&d_za.matmul_t(&params.projector.weight)?)?;

    for (i, layer) in params.vision.iter().enumerate().rev() {
        let need_input = i > 0;
        let (g, d_in) = layer.backward(&cache.vision_acts[i], &cache.vision_acts[i + 1], &d_out, need_input)?;
        grads.vision[i] = g;
        if let Some(d) = d_in {
            d_out = d;
        }
    }

    if params.text_trainable() {
        let d_zt = loss_grads.d_zt.as_ref().ok_or_else(|| {
            Error::Config("text tower has trainable layers but no text gradient was supplied".into())
        })?;
        if d_zt.shape() != cache.z_t.shape() {
            return Err(Error::ShapeMismatch {
                op: "backward_text",
                lhs: d_zt.shape(),
                rhs: cache.z_t.shape(),
            });
        }
        let first_trainable = params.text.iter().position(|l| l.spec.trainable).unwrap();
        let head_idx = params.text.len() - 1;
        let head = &params.text[head_idx];
        let need_below = first_trainable < head_idx;
        let (g, d_pooled) = head.backward(&cache.pooled, &cache.z_t, d_zt, need_below)?;
        if head.spec.trainable {
            grads.text[head_idx] = g;
        }
        if let Some(d_pooled) = d_pooled {
            let mut d_out = mean_unpool(&d_pooled, params.text_tokens);
            for i in (first_trainable..head_idx).rev() {
                let layer = &params.text[i];
                let (g, d_in) = layer.backward(&cache.text_acts[i], &cache.text_acts[i + 1], &d_out, i > first_trainable)?;
                if layer.spec.trainable {
                    grads.text[i] = g;
                }
                if let Some(d) = d_in {
                    d_out = d;
                }
            }
        }
    }
    for (layer, g) in params.vision.iter().zip(grads.vision.iter_mut()) {
        if !layer.spec.trainable {
            *g = LayerGrad::zeros(layer);
        }
    }
    if !params.projector.spec.trainable {
        grads.projector = LayerGrad::zeros(&params.projector);
    }
    Ok(grads)
}

/// Trainable versus frozen parameter totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCount {
    pub trainable: usize,
    pub frozen: usize,
    /// `frozen / (frozen + trainable) · 100`.
    pub reduction_pct: f64,
}

/// Counts parameters as they would be flagged under `policy`.
pub fn count_params(params: &ModelParams, policy: FreezePolicy) -> ParamCount {
    let mut trainable = 0;
    let mut frozen = 0;
    for l in params.vision.iter().chain(std::iter::once(&params.projector)) {
        if l.spec.trainable {
            trainable += l.param_count();
        } else {
            frozen += l.param_count();
        }
    }
    let n = params.text.len();
    for (i, l) in params.text.iter().enumerate() {
        if policy.is_trainable(i, n) {
            trainable += l.param_count();
        } else {
            frozen += l.param_count();
        }
    }
    let total = trainable + frozen;
    let reduction_pct = if total == 0 {
        0.0
    } else {
        frozen as f64 / total as f64 * 100.0
    };
    ParamCount {
        trainable,
        frozen,
        reduction_pct,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::Objective;

    fn default_model() -> ModelParams {
        init_model(&ModelConfig::default(), &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = init_model(&cfg, &mut Rng::new(5)).unwrap();
        let b = init_model(&cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().all(|l| l.bias.max_abs() == 0.0));
    }

    #[test]
    fn mismatched_projector_is_rejected() {
        let cfg = ModelConfig {
            projector_dim: 7,
            ..ModelConfig::default()
        };
        assert!(matches!(init_model(&cfg, &mut Rng::new(0)), Err(Error::BadDimChain(_))));
    }

    #[test]
    fn default_param_count() {
        let m = default_model();
        let total: usize = m.layers().map(Layer::param_count).sum();
        assert_eq!(total, 32 * 64 + 64 + 64 * 16 + 16 + 16 * 8 + 8 + (32 * 16 + 16 + 16 * 8 + 8));
        assert_eq!(total, 3952);
        let c = count_params(&m, FreezePolicy::frozen());
        assert_eq!(c.trainable, 3288);
        assert_eq!(c.frozen, 664);
        assert_eq!(c.reduction_pct, 664.0 / 3952.0 * 100.0);
        let all = count_params(&m, FreezePolicy::unfreeze_last(99));
        assert_eq!((all.trainable, all.frozen), (3952, 0));
    }

    #[test]
    fn count_params_simple_arithmetic() {
        let lin = |i: usize, o: usize, t: bool| Layer {
            spec: LayerSpec { in_dim: i, out_dim: o, activation: Activation::None, trainable: t },
            weight: Matrix::zeros(i, o),
            bias: Matrix::zeros(1, o),
        };
        let m = ModelParams::from_layers(
            vec![lin(288, 10, true)],
            lin(10, 10, true),
            vec![lin(88, 10, false), lin(10, 10, false)],
            1,
        )
        .unwrap();
        let c = count_params(&m, FreezePolicy::frozen());
        assert_eq!(c.trainable, 288 * 10 + 10 + 10 * 10 + 10);
        assert_eq!(c.frozen, 88 * 10 + 10 + 10 * 10 + 10);
        assert_eq!(c.trainable, 3000);
        assert_eq!(c.frozen, 1000);
        assert_eq!(c.reduction_pct, 25.0);
    }

    #[test]
    fn zero_input_through_tanh_tower_gives_zero_latent() {
        let mut m = default_model();
        for l in &mut m.vision {
            l.spec.activation = Activation::Tanh;
        }
        let out = forward(&m, &Matrix::zeros(3, 32), &Matrix::zeros(3, 32)).unwrap();
        assert_eq!(out.z_v, Matrix::zeros(3, 16));
    }

    #[test]
    fn identity_composition() {
        let ident = |n: usize| Layer {
            spec: LayerSpec { in_dim: n, out_dim: n, activation: Activation::None, trainable: true },
            weight: Matrix::identity(n),
            bias: Matrix::zeros(1, n),
        };
        let mut text_head = ident(3);
        text_head.spec.trainable = false;
        let m = ModelParams::from_layers(vec![ident(3)], ident(3), vec![text_head], 1).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);
        let out = forward(&m, &x, &x).unwrap();
        assert_eq!(out.z_a, x);
    }

    #[test]
    fn token_mean_pool_matches_manual() {
        let cfg = ModelConfig {
            text_dims: vec![4, 5, 8],
            text_tokens: 3,
            ..ModelConfig::default()
        };
        let m = init_model(&cfg, &mut Rng::new(2)).unwrap();
        let x = Rng::new(3).normal_matrix(2, 12);
        let z_t = m.text_forward(&x).unwrap();
        // manual: per-token body, mean, head
        let body = &m.text[0];
        let head = &m.text[1];
        for b in 0..2 {
            let mut pooled = vec![0.0; 5];
            for t in 0..3 {
                let tok = Matrix::from_vec(1, 4, x.row(b)[t * 4..(t + 1) * 4].to_vec()).unwrap();
                let h = body.forward(&tok).unwrap();
                for (p, v) in pooled.iter_mut().zip(h.as_slice()) {
                    *p += v / 3.0;
                }
            }
            let z = head.forward(&Matrix::from_vec(1, 5, pooled).unwrap()).unwrap();
            for (u, v) in z.as_slice().iter().zip(z_t.row(b)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frozen_text_gets_exact_zero_grads() {
        let m = default_model();
        let mut rng = Rng::new(4);
        let out = forward(&m, &rng.normal_matrix(8, 32), &rng.normal_matrix(8, 32)).unwrap();
        let (_, lg) = Objective::default().evaluate(&out.z_a, &out.z_t, &out.z_v).unwrap();
        let g = backward(&m, &out.cache, &lg).unwrap();
        for t in &g.text {
            assert!(t.weight.as_slice().iter().all(|&v| v == 0.0));
            assert!(t.bias.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(g.vision[0].weight.max_abs() > 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut m = default_model();
        m.apply_freeze_policy(FreezePolicy::unfreeze_last(2));
        let mut rng = Rng::new(4);
        let out = forward(&m, &rng.normal_matrix(5, 32), &rng.normal_matrix(5, 32)).unwrap();
        let mut lg = LossGrads::zeros_like(&out.z_a, &out.z_v);
        lg.d_zt = Some(Matrix::zeros(5, 8));
        let g = backward(&m, &out.cache, &lg).unwrap();
        assert_eq!(g, ParamGrads::zeros_like(&m));
    }

    #[test]
    fn stale_cache_is_detected() {
        let mut m = default_model();
        let mut rng = Rng::new(4);
        let out = forward(&m, &rng.normal_matrix(4, 32), &rng.normal_matrix(4, 32)).unwrap();
        let lg = LossGrads::zeros_like(&out.z_a, &out.z_v);
        m.tensors_mut()[0].0.set(0, 0, 0.5);
        assert!(matches!(backward(&m, &out.cache, &lg), Err(Error::StaleCache)));
    }

    #[test]
    fn unfrozen_text_requires_text_gradient() {
        let mut m = default_model();
        m.apply_freeze_policy(FreezePolicy::unfreeze_last(1));
        let mut rng = Rng::new(4);
        let out = forward(&m, &rng.normal_matrix(4, 32), &rng.normal_matrix(4, 32)).unwrap();
        let lg = LossGrads::zeros_like(&out.z_a, &out.z_v);
        assert!(backward(&m, &out.cache, &lg).is_err());
    }

    #[test]
    fn freeze_policy_counts_from_output_end() {
        let p = FreezePolicy::unfreeze_last(1);
        assert!(!p.is_trainable(0, 2));
        assert!(p.is_trainable(1, 2));
        assert!(!FreezePolicy::frozen().is_trainable(1, 2));
        assert!(FreezePolicy::unfreeze_last(5).is_trainable(0, 2));
    }
}
