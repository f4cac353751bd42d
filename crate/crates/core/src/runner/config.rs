use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossMode;
use crate::models::{FreezePolicy, ModelConfig};
use crate::optim::OptimConfig;
use crate::synthdata::SynthConfig;

/// Complete description of one pre-training run. Loaded from JSON; unknown
/// keys are rejected, missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub unfreeze_last_n: usize,
    pub eval_every: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Mean-center vision features before the orthogonality gram matrix.
    pub center_features: bool,
    /// Size of the fixed held-out batch used for geometry reports.
    pub eval_size: usize,
    /// Labelled fraction of the probe's training pool.
    pub probe_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
            optim: OptimConfig::default(),
            epochs: 500,
            batch_size: 128,
            loss_mode: LossMode::Both,
            unfreeze_last_n: 0,
            eval_every: 50,
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            center_features: false,
            eval_size: 256,
            probe_fraction: 0.1,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets both the run seed and the data seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn freeze_policy(&self) -> FreezePolicy {
        FreezePolicy::unfreeze_last(self.unfreeze_last_n)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        self.optim.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.eval_size < 4 {
            return Err(Error::Config("eval_size must be at least 4".into()));
        }
        if self.synth.n_samples < self.eval_size + 2 {
            return Err(Error::Config(format!(
                "n_samples {} leaves no training data after the {}-sample eval batch",
                self.synth.n_samples, self.eval_size
            )));
        }
        if self.synth.vision_dim != self.model.vision_input_dim() {
            return Err(Error::Config(format!(
                "synth.vision_dim {} differs from vision input width {}",
                self.synth.vision_dim,
                self.model.vision_input_dim()
            )));
        }
        if self.synth.text_dim != self.model.text_input_dim() {
            return Err(Error::Config(format!(
                "synth.text_dim {} differs from text input width {}",
                self.synth.text_dim,
                self.model.text_input_dim()
            )));
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction <= 1.0) {
            return Err(Error::Config(format!("probe_fraction {} not in (0, 1]", self.probe_fraction)));
        }
        Ok(())
    }
}
