//! Adam, the learning-rate schedule and the alternating adversarial training loop.

pub mod adam;
pub mod config;
pub mod schedule;
pub mod trainer;

pub use adam::{Adam, AdamHyper};
pub use config::{DataConfig, ExtractorKind, Precision, TrainConfig};
pub use schedule::{Schedule, BASE_LR};
pub use trainer::{checkpoint_config, checkpoint_dir, run, Batch, LossReport, Trainer, LOG_HEADER};
