//! Run artifacts: metrics and timing CSVs, checkpoint and embeddings.

use std::fs;
use std::path::{Path, PathBuf};

use super::ablate::variant_name;
use super::io::write_embedding;
use super::plots::emit_plots;
use super::train::{EpochRecord, PretrainOutput};
use super::RunConfig;
use crate::error::Result;
use crate::models::save_checkpoint;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.mflg";
pub const CONFIG_FILE: &str = "config.json";

pub fn write_metrics_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records back; `wall_ms` is not stored and comes back as 0.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
    Ok(records)
}

pub fn write_timing_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "wall_ms"])?;
    for r in records {
        w.write_record([r.epoch.to_string(), r.wall_ms.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every artifact of a finished run into `dir` and returns the paths.
pub fn write_run_outputs(dir: &Path, config: &RunConfig, out: &PretrainOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut file = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    fs::write(file(CONFIG_FILE), config.to_json())?;
    write_metrics_csv(&file(METRICS_FILE), &out.records)?;
    write_timing_csv(&file(TIMING_FILE), &out.records)?;
    save_checkpoint(&out.params, &file(CHECKPOINT_FILE))?;
    write_embedding(&file("z_v.mfem"), &out.eval.z_v)?;
    write_embedding(&file("z_a.mfem"), &out.eval.z_a)?;
    write_embedding(&file("z_t.mfem"), &out.eval.z_t)?;
    let variant = variant_name(config.loss_mode, config.unfreeze_last_n);
    written.extend(emit_plots(dir, &out.records, &[(variant, out.geometry.pca3.clone())])?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::pretrain;

    #[test]
    fn metrics_round_trip_without_wall_time() {
        let mut cfg = RunConfig::default();
        cfg.epochs = 1;
        cfg.synth.n_samples = 300;
        cfg.eval_size = 32;
        let out = pretrain(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_run_outputs(dir.path(), &cfg, &out).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let back = read_metrics_csv(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(back.len(), out.records.len());
        for (a, b) in back.iter().zip(&out.records) {
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.train_total, b.train_total);
            assert_eq!(a.wall_ms, 0);
        }
    }
}
