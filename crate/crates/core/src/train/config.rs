use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adversarial::{DiscConfig, GanMode, LossWeights};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::schedule::{Schedule, BASE_LR};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// Frozen random 3x3 conv stack.
    #[default]
    Random,
    Identity,
}

/// Where training pairs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory; synthetic pairs are generated when absent.
    pub dir: Option<PathBuf>,
    pub n_identities: usize,
    pub poses_per_identity: usize,
    /// Synthesis seed; defaults to the run seed.
    pub seed: Option<u64>,
    /// Keep only the first `max_pairs` pairs.
    pub max_pairs: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dir: None, n_identities: 2, poses_per_identity: 2, seed: None, max_pairs: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub precision: Precision,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Iteration after which the learning rate decays linearly to zero;
    /// defaults to two thirds of `iterations`.
    pub decay_start: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub weights: LossWeights,
    pub gan_mode: GanMode,
    pub extractor: ExtractorKind,
    pub extractor_seed: u64,
    /// Save a checkpoint every this many iterations (0: only the initial and final ones).
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub model: ModelConfig,
    pub disc: DiscConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            precision: Precision::default(),
            iterations: 1000,
            batch_size: 4,
            lr: BASE_LR,
            decay_start: None,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            d_steps: 1,
            weights: LossWeights::default(),
            gan_mode: GanMode::default(),
            extractor: ExtractorKind::default(),
            extractor_seed: 0,
            checkpoint_every: 0,
            log_every: 1,
            model: ModelConfig::default(),
            disc: DiscConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        let start = self.decay_start.unwrap_or(self.iterations * 2 / 3);
        Schedule::new(self.lr, start, self.iterations)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.model.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.disc.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.weights.validate() {
            problems.push(e.to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            problems.push("lr must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            problems.push("adam_eps must be positive".into());
        }
        if self.d_steps == 0 {
            problems.push("d_steps must be >= 1".into());
        }
        if self.log_every == 0 {
            problems.push("log_every must be >= 1".into());
        }
        if let Some(d) = self.decay_start {
            if d > self.iterations {
                problems.push(format!("decay_start {d} exceeds iterations {}", self.iterations));
            }
        }
        if self.data.dir.is_none() && (self.data.n_identities == 0 || self.data.poses_per_identity == 0) {
            problems.push("data needs at least one identity and one pose".into());
        }
        if self.data.max_pairs == Some(0) {
            problems.push("data.max_pairs must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}
