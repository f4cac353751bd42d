//! Loss-term × text-unfreezing ablation grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::probe::probe;
use super::train::{init_params, pretrain_from};
use super::RunConfig;
use crate::error::Result;
use crate::losses::LossMode;
use crate::models::count_params;
use crate::numerics::Matrix;
use crate::synthdata::generate;

/// One cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub loss_mode: LossMode,
    pub unfreeze_last_n: usize,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub reduction_pct: f64,
    pub final_align: f64,
    pub final_orth_diag: f64,
    pub final_orth_offdiag: f64,
    pub final_total: f64,
    pub effective_rank: f64,
    pub explained_variance_top3: f64,
    pub uniformity: f64,
    pub alignment_metric: f64,
    pub probe_accuracy: f64,
    /// Epoch-averaged training total loss over the first and the last epoch.
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
}

impl AblationRow {
    /// Short variant tag such as `both_u0`.
    pub fn variant(&self) -> String {
        variant_name(self.loss_mode, self.unfreeze_last_n)
    }
}

pub fn variant_name(mode: LossMode, unfreeze_last_n: usize) -> String {
    format!("{}_u{unfreeze_last_n}", mode.name())
}

#[derive(Debug, Clone)]
pub struct AblationOutput {
    pub rows: Vec<AblationRow>,
    /// Eval-batch PCA coordinates per variant, in row order.
    pub pca3: Vec<(String, Matrix)>,
}

/// Runs every loss mode against every `unfreeze_last_n ∈ 0..=L` for one seed.
/// All cells share the data and the initialization drawn from `base`.
pub fn ablate(base: &RunConfig) -> Result<AblationOutput> {
    base.validate()?;
    let data = generate(&base.synth)?;
    let init = init_params(base)?;
    let text_layers = base.model.text_layer_count();
    let mut rows = Vec::new();
    let mut pca3 = Vec::new();
    for mode in LossMode::ALL {
        for n in 0..=text_layers {
            let mut cfg = base.clone();
            cfg.loss_mode = mode;
            cfg.unfreeze_last_n = n;
            let out = pretrain_from(&cfg, init.clone(), &data)?;
            let counts = count_params(&out.params, cfg.freeze_policy());
            let accuracy = probe(&out.params, &data, cfg.probe_fraction, cfg.seed)?.accuracy;
            let last = out.final_record();
            let row = AblationRow {
                seed: cfg.seed,
                loss_mode: mode,
                unfreeze_last_n: n,
                trainable_params: counts.trainable,
                frozen_params: counts.frozen,
                reduction_pct: counts.reduction_pct,
                final_align: last.eval_align,
                final_orth_diag: last.eval_orth_diag,
                final_orth_offdiag: last.eval_orth_offdiag,
                final_total: last.eval_total,
                effective_rank: last.effective_rank,
                explained_variance_top3: last.explained_variance_top3,
                uniformity: last.uniformity,
                alignment_metric: last.alignment_metric,
                probe_accuracy: accuracy,
                first_epoch_loss: out.epoch_losses.get(1).map_or(f64::NAN, |l| l.total),
                last_epoch_loss: out.epoch_losses.last().map_or(f64::NAN, |l| l.total),
            };
            log::info!(
                "{}: erank {:.3} probe {:.4} trainable {}",
                row.variant(),
                row.effective_rank,
                row.probe_accuracy,
                row.trainable_params
            );
            pca3.push((row.variant(), out.geometry.pca3.clone()));
            rows.push(row);
        }
    }
    Ok(AblationOutput { rows, pca3 })
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ablation_csv(path: &Path) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<AblationRow>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_and_parameter_monotonicity() {
        let mut cfg = RunConfig::default();
        cfg.epochs = 2;
        cfg.synth.n_samples = 600;
        cfg.eval_every = 1;
        let out = ablate(&cfg).unwrap();
        let l = cfg.model.text_layer_count();
        assert_eq!(out.rows.len(), 3 * (l + 1));
        assert_eq!(out.pca3.len(), out.rows.len());
        for chunk in out.rows.chunks(l + 1) {
            assert!(chunk.windows(2).all(|w| w[1].trainable_params > w[0].trainable_params));
            assert!(chunk[0].reduction_pct > 0.0);
            assert_eq!(chunk[l].frozen_params, 0);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablation.csv");
        write_ablation_csv(&path, &out.rows).unwrap();
        assert_eq!(read_ablation_csv(&path).unwrap(), out.rows);
    }
}
