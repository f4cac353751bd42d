//! Experiment orchestration: pre-training, ablations, probing, gradient
//! checks, and the file formats they read and write.

mod ablate;
mod config;
pub mod gradcheck;
pub mod io;
mod plots;
mod probe;
mod report;
mod train;

pub use ablate::{ablate, read_ablation_csv, variant_name, write_ablation_csv, AblationOutput, AblationRow};
pub use config::RunConfig;
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use plots::{emit_plots, render_svg, write_pca3_csv};
pub use probe::{probe, probe_features, ProbeResult, MIN_PROBE_TRAIN, PROBE_ITERS, PROBE_LR};
pub use report::{
    read_metrics_csv, write_metrics_csv, write_run_outputs, write_timing_csv, CHECKPOINT_FILE, CONFIG_FILE,
    METRICS_FILE, TIMING_FILE,
};
pub use train::{holdout_split, init_params, pretrain, pretrain_from, EpochRecord, EvalEmbeddings, PretrainOutput};
