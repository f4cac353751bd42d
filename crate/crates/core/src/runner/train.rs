//! Mini-batch pre-training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::diagnostics::{geometry_report, GeometryReport};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, Objective};
use crate::models::{backward, count_params, forward, init_model, ModelParams};
use crate::numerics::{Matrix, Rng, DEFAULT_EPS};
use crate::optim::{step, OptimState};
use crate::synthdata::{generate, Batch};

// ChaCha stream ids carved out of the run seed.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_HOLDOUT: u64 = 2;
pub(crate) const STREAM_SHUFFLE: u64 = 3;
pub(crate) const STREAM_PROBE: u64 = 4;

/// Metrics at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_align: f64,
    pub train_orth_diag: f64,
    pub train_orth_offdiag: f64,
    pub train_total: f64,
    pub eval_align: f64,
    pub eval_orth_diag: f64,
    pub eval_orth_offdiag: f64,
    pub eval_total: f64,
    pub effective_rank: f64,
    pub explained_variance_top3: f64,
    pub uniformity: f64,
    pub alignment_metric: f64,
    pub effective_rank_normalized: f64,
    pub explained_variance_top3_normalized: f64,
    pub trainable_params: usize,
    pub frozen_params: usize,
    /// Wall time since the start of the run. Kept out of `metrics.csv` so that
    /// file stays byte-reproducible.
    #[serde(skip)]
    pub wall_ms: u64,
}

impl EpochRecord {
    pub fn train(&self) -> LossBreakdown {
        LossBreakdown::new(self.train_align, self.train_orth_diag, self.train_orth_offdiag)
    }

    pub fn eval(&self) -> LossBreakdown {
        LossBreakdown::new(self.eval_align, self.eval_orth_diag, self.eval_orth_offdiag)
    }
}

/// Embeddings of the held-out evaluation batch.
#[derive(Debug, Clone)]
pub struct EvalEmbeddings {
    pub z_v: Matrix,
    pub z_a: Matrix,
    pub z_t: Matrix,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub initial: ModelParams,
    pub params: ModelParams,
    pub records: Vec<EpochRecord>,
    /// Mean mini-batch losses; index 0 is the untrained model, index `e` the
    /// average over epoch `e`.
    pub epoch_losses: Vec<LossBreakdown>,
    pub geometry: GeometryReport,
    pub eval: EvalEmbeddings,
}

impl PretrainOutput {
    pub fn final_record(&self) -> &EpochRecord {
        self.records.last().expect("at least the epoch-0 record")
    }
}

/// Model initialization for `config`, with its freeze policy applied.
pub fn init_params(config: &RunConfig) -> Result<ModelParams> {
    let mut rng = Rng::new(config.seed).fork(STREAM_INIT);
    let mut params = init_model(&config.model, &mut rng)?;
    params.apply_freeze_policy(config.freeze_policy());
    Ok(params)
}

/// Fixed held-out evaluation batch and the remaining training samples.
pub fn holdout_split(config: &RunConfig, data: &Batch) -> (Batch, Batch) {
    let order = Rng::new(config.seed).fork(STREAM_HOLDOUT).permutation(data.len());
    let (eval, train) = order.split_at(config.eval_size.min(data.len()));
    (data.select(eval), data.select(train))
}

/// Generates the synthetic data, initializes the model, and trains it.
pub fn pretrain(config: &RunConfig) -> Result<PretrainOutput> {
    config.validate()?;
    let data = generate(&config.synth)?;
    pretrain_from(config, init_params(config)?, &data)
}

fn objective(config: &RunConfig, params: &ModelParams) -> Objective {
    Objective {
        eps: DEFAULT_EPS,
        mode: config.loss_mode,
        center_features: config.center_features,
        text_grad: params.text_trainable(),
    }
}

fn minibatches(n: usize, batch_size: usize, order: &[usize]) -> Vec<&[usize]> {
    // Trailing batches below two rows cannot feed the gram matrix.
    order.chunks(batch_size).filter(|c| c.len() >= 2 || n < 2).collect()
}

/// Trains `params` on `data` under `config`; initialization is supplied by the caller.
pub fn pretrain_from(config: &RunConfig, mut params: ModelParams, data: &Batch) -> Result<PretrainOutput> {
    config.validate()?;
    params.apply_freeze_policy(config.freeze_policy());
    let started = Instant::now();
    let initial = params.clone();
    let (eval_batch, train) = holdout_split(config, data);
    let counts = count_params(&params, config.freeze_policy());
    let mut shuffle_rng = Rng::new(config.seed).fork(STREAM_SHUFFLE);
    let mut state = OptimState::new(config.optim, &params);

    let evaluate = |params: &ModelParams| -> Result<(LossBreakdown, GeometryReport, EvalEmbeddings)> {
        let out = forward(params, &eval_batch.x_v, &eval_batch.x_t)?;
        let losses = objective(config, params).loss(&out.z_a, &out.z_t, &out.z_v)?;
        let geometry = geometry_report(&out.z_v, &out.z_a, &out.z_t)?;
        Ok((
            losses,
            geometry,
            EvalEmbeddings {
                z_v: out.z_v,
                z_a: out.z_a,
                z_t: out.z_t,
            },
        ))
    };
    let record = |epoch: usize, train: LossBreakdown, eval: LossBreakdown, g: &GeometryReport| EpochRecord {
        epoch,
        train_align: train.align,
        train_orth_diag: train.orth_diag,
        train_orth_offdiag: train.orth_offdiag,
        train_total: train.total,
        eval_align: eval.align,
        eval_orth_diag: eval.orth_diag,
        eval_orth_offdiag: eval.orth_offdiag,
        eval_total: eval.total,
        effective_rank: g.effective_rank,
        explained_variance_top3: g.explained_variance_top3,
        uniformity: g.uniformity,
        alignment_metric: g.alignment_metric,
        effective_rank_normalized: g.effective_rank_normalized,
        explained_variance_top3_normalized: g.explained_variance_top3_normalized,
        trainable_params: counts.trainable,
        frozen_params: counts.frozen,
        wall_ms: started.elapsed().as_millis() as u64,
    };

    // Epoch 0: the untrained model over the training set in natural order.
    let natural: Vec<usize> = (0..train.len()).collect();
    let obj = objective(config, &params);
    let mut initial_losses = Vec::new();
    for idx in minibatches(train.len(), config.batch_size, &natural) {
        let b = train.select(idx);
        let out = forward(&params, &b.x_v, &b.x_t)?;
        initial_losses.push(obj.loss(&out.z_a, &out.z_t, &out.z_v)?);
    }
    let mut epoch_losses = vec![LossBreakdown::mean(&initial_losses)];
    let (eval_losses, mut geometry, mut eval_emb) = evaluate(&params)?;
    if !epoch_losses[0].is_finite() || !eval_losses.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let mut records = vec![record(0, epoch_losses[0], eval_losses, &geometry)];

    let mut order = natural;
    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let obj = objective(config, &params);
        let mut batch_losses = Vec::new();
        for idx in minibatches(train.len(), config.batch_size, &order) {
            let b = train.select(idx);
            let out = forward(&params, &b.x_v, &b.x_t)?;
            let (losses, grads) = obj.evaluate(&out.z_a, &out.z_t, &out.z_v)?;
            if !losses.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let param_grads = backward(&params, &out.cache, &grads)?;
            step(&mut params, &param_grads, &mut state)?;
            batch_losses.push(losses);
        }
        let epoch_loss = LossBreakdown::mean(&batch_losses);
        if !epoch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(epoch_loss);
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let (eval_losses, g, emb) = evaluate(&params)?;
            if !eval_losses.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            records.push(record(epoch, epoch_loss, eval_losses, &g));
            geometry = g;
            eval_emb = emb;
            log::debug!(
                "epoch {epoch}: total {:.5} erank {:.3}",
                epoch_loss.total,
                geometry.effective_rank
            );
        }
    }

    Ok(PretrainOutput {
        initial,
        params,
        records,
        epoch_losses,
        geometry,
        eval: eval_emb,
    })
}
